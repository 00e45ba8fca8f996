//! Cross-module checks on the reference models and presets.

use sagd_mixing::chains::{ChainState, Theta};
use sagd_mixing::harness::fit::fit_exponential_rate;
use sagd_mixing::harness::run_realizable;
use sagd_mixing::harness::table::{
    benchmark_thetas, run_table, TableOptions, GAUSSIAN_BENCHMARK, GAUSSIAN_BENCHMARK_MU, UNIFORM_RADEMACHER_BENCHMARK,
    UNIFORM_RADEMACHER_BENCHMARK_KAPPA,
};
use sagd_mixing::spectral::j_block_radii;
use sagd_mixing::tuner::{preset_theta, Preset};
use sagd_mixing::MomentSpec;

#[test]
fn empirical_rates_within_factor_two_of_theory() {
    let cases = [
        (
            MomentSpec::gaussian_two_scale(GAUSSIAN_BENCHMARK_MU).unwrap(),
            benchmark_thetas(&GAUSSIAN_BENCHMARK),
        ),
        (
            MomentSpec::uniform_rademacher(UNIFORM_RADEMACHER_BENCHMARK_KAPPA).unwrap(),
            benchmark_thetas(&UNIFORM_RADEMACHER_BENCHMARK),
        ),
    ];
    for (m, thetas) in &cases {
        for row in run_table(m, thetas, &TableOptions::default()).unwrap() {
            let ratio = row.empirical_rate / row.theoretical_rate;
            assert!((0.5..=2.0).contains(&ratio), "{:?}: ratio {ratio}", row.theta);
            assert!(row.empirical_stderr.is_finite());
        }
    }
}

#[test]
fn presets_satisfy_the_tuner_constraint() {
    for s in [0.005, 0.01, 0.02] {
        for (m, p) in [
            (MomentSpec::gaussian_two_scale(s).unwrap(), Preset::Gaussian { mu: s }),
            (
                MomentSpec::uniform_rademacher(s).unwrap(),
                Preset::UniformRademacher { kappa: s },
            ),
        ] {
            let radii = j_block_radii(&m, &preset_theta(p).unwrap()).unwrap();
            let bound = 1.0 - 0.2 * (m.mu() / m.l()).sqrt();
            let last = *radii.last().unwrap();
            assert!(last <= bound, "{}: rho(J_d) = {last} > {bound}", m.name());
        }
    }
}

#[test]
fn realizable_sagd_preset_outpaces_sgd() {
    let mu = 0.01;
    let m = MomentSpec::gaussian_two_scale(mu).unwrap();
    let w_star = [0.3, -1.2];
    let init = ChainState::at_rest(vec![1.0, 1.0]);
    let fitted = |t: Theta| {
        let r = run_realizable(&m, &w_star, &t, &init, 1500, 5, 42, 0.05 * mu.sqrt()).unwrap();
        assert_eq!(r.diverged_runs, 0);
        fit_exponential_rate(&r.mean, 0.1).unwrap().rate
    };
    let sagd = fitted(preset_theta(Preset::Gaussian { mu }).unwrap());
    let sgd = fitted(Theta::sgd(0.6).unwrap());
    assert!(sagd >= mu.sqrt() / 5.0, "sagd rate {sagd}");
    assert!(sagd > sgd, "sagd {sagd} vs sgd {sgd}");
}
