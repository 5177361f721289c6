//! Scratch probe for fit behavior (not part of the test suite).

use std::time::Instant;

use rbig::data::Seed;
use rbig::flow::{FitConfig, GaussianizationFlow};
use rbig::synth::{
    gaussian_total_correlation, sample_circles, sample_gaussian, sample_student, CirclesSpec,
    GaussianSpec, StudentSpec,
};

fn main() {
    let t0 = Instant::now();

    // bivariate gaussian rho = 0.5
    let spec = GaussianSpec::equicorrelated(2, 0.5).unwrap();
    let analytic = gaussian_total_correlation(&spec).unwrap();
    for seed in 0..3u64 {
        let data = sample_gaussian(&spec, 50_000, Seed(seed)).unwrap();
        let t = Instant::now();
        let flow = GaussianizationFlow::fit(&data, FitConfig::default().with_seed(Seed(seed))).unwrap();
        println!(
            "rho=0.5 seed={seed}: total={:.4} raw={:.4} analytic={:.4} L={} stop={:?} surr_mean={:.5} thr={:.5} dt[0..3]={:?} [{:?}]",
            flow.total_delta_t(),
            flow.raw_total_delta_t(),
            analytic,
            flow.n_layers(),
            flow.stop_reason(),
            flow.surrogate().mean,
            flow.surrogate().threshold,
            &flow.layer_delta_ts()[..3.min(flow.n_layers())],
            t.elapsed(),
        );
        let direct = flow.delta_t_direct(&data).unwrap();
        println!("   delta_t_direct = {direct:.4} (gap {:+.4})", direct - flow.total_delta_t());
    }

    // trivariate equicorrelated rho = 0.5
    let spec3 = GaussianSpec::equicorrelated(3, 0.5).unwrap();
    let analytic3 = gaussian_total_correlation(&spec3).unwrap();
    let data3 = sample_gaussian(&spec3, 50_000, Seed(1)).unwrap();
    let flow3 = GaussianizationFlow::fit(&data3, FitConfig::default().with_seed(Seed(1))).unwrap();
    println!(
        "equicorr d=3: total={:.4} analytic={:.4} L={}",
        flow3.total_delta_t(),
        analytic3,
        flow3.n_layers()
    );

    // already standard gaussian
    let g = sample_gaussian(&GaussianSpec::standard(3), 50_000, Seed(5)).unwrap();
    let fg = GaussianizationFlow::fit(&g, FitConfig::default().with_seed(Seed(5))).unwrap();
    println!(
        "std gauss d=3: total={:.4} L={} stop={:?}",
        fg.total_delta_t(),
        fg.n_layers(),
        fg.stop_reason()
    );

    // circles
    let circles = CirclesSpec::new(vec![1.0, 2.0], 0.05).unwrap();
    let cd = sample_circles(&circles, 50_000, Seed(2)).unwrap();
    let t = Instant::now();
    let cf = GaussianizationFlow::fit(&cd, FitConfig::default().with_seed(Seed(2))).unwrap();
    let dts = cf.layer_delta_ts();
    println!(
        "circles: total={:.4} raw={:.4} L={} stop={:?} min_dt={:.4} [{:?}]",
        cf.total_delta_t(),
        cf.raw_total_delta_t(),
        cf.n_layers(),
        cf.stop_reason(),
        dts.iter().cloned().fold(f64::INFINITY, f64::min),
        t.elapsed(),
    );

    // student t nu=2, d=10 at N=50000: the heavy benchmark cell
    let sspec = StudentSpec::equicorrelated(10, 0.5, 2.0).unwrap();
    let sd = sample_student(&sspec, 50_000, Seed(3)).unwrap();
    let t = Instant::now();
    let sf = GaussianizationFlow::fit(&sd, FitConfig::default().with_seed(Seed(3))).unwrap();
    println!(
        "student nu=2 d=10: total={:.4} L={} stop={:?} [{:?}]",
        sf.total_delta_t(),
        sf.n_layers(),
        sf.stop_reason(),
        t.elapsed(),
    );

    // student joint d=20 (MI-style stack)
    let sspec20 = StudentSpec::equicorrelated(20, 0.5, 2.0).unwrap();
    let sd20 = sample_student(&sspec20, 50_000, Seed(4)).unwrap();
    let t = Instant::now();
    let sf20 = GaussianizationFlow::fit(&sd20, FitConfig::default().with_seed(Seed(4))).unwrap();
    println!(
        "student nu=2 d=20: total={:.4} L={} stop={:?} [{:?}]",
        sf20.total_delta_t(),
        sf20.n_layers(),
        sf20.stop_reason(),
        t.elapsed(),
    );

    println!("total probe time {:?}", t0.elapsed());
}
