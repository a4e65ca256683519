//! Monte Carlo checks against synthetic campaigns with known ground truth.

use policy_targeting::eval::{evaluate, score_dataset};
use policy_targeting::heterogeneity::extreme_group_summary;
use policy_targeting::matching::transfer_with_radius_sweep;
use policy_targeting::nuisance::{NuisanceSpec, StratumDesign};
use policy_targeting::policy::{learn_exact_tree, PolicyTree, Rule, TreeRule};
use policy_targeting::scores::{estimate_ate_aipw, estimate_ate_ols, OlsControls};
use policy_targeting::synthetic::{
    constant_effect_spec, generate, linear_cate_spec, two_group_spec, DgpSpec, FeatureDist, FeatureSpec, NoiseSpec,
    PropensityTable, StratumSpec, Surface,
};

const N: usize = 20_000;

#[test]
fn aipw_ate_converges_to_mean_effect() {
    let spec = linear_cate_spec();
    let (_, truth) = generate(&spec, 100, 0).unwrap();
    let ate = truth.values.all_treat.value - truth.values.no_treat.value + spec.cost;
    for seed in 0..10 {
        let (ds, _) = generate(&spec, N, seed).unwrap();
        let scores = score_dataset(&ds, &NuisanceSpec::default(), "y", seed).unwrap();
        let e = estimate_ate_aipw(&scores).unwrap();
        assert!((e.estimate - ate).abs() <= 3.0 * e.se, "seed {seed}: {} vs {ate} (SE {})", e.estimate, e.se);
    }
}

#[test]
fn ols_recovers_constant_effect_and_agrees_with_aipw() {
    let (ds, _) = generate(&constant_effect_spec(2.0, 3.0), N, 21).unwrap();
    let ols = estimate_ate_ols(&ds, OlsControls::Strata(StratumDesign::MainEffects), "y").unwrap();
    assert!((ols.estimate - 2.0).abs() <= 3.0 * ols.se, "{ols:?}");
    let aipw = estimate_ate_aipw(&score_dataset(&ds, &NuisanceSpec::default(), "y", 21).unwrap()).unwrap();
    assert!((ols.estimate - aipw.estimate).abs() <= 3.0 * ols.se.max(aipw.se));
}

#[test]
fn true_optimum_bounds_a_learned_rule_on_fresh_data() {
    let spec = two_group_spec();
    let (train, _) = generate(&spec, N, 31).unwrap();
    let (test, truth) = generate(&spec, N, 32).unwrap();
    let names = train.schema().features.clone();
    let train_scores = score_dataset(&train, &NuisanceSpec::default(), "y", 31).unwrap();
    let learned = learn_exact_tree(&train_scores.net_reward, &train.features(), &names, 2).unwrap();
    let test_scores = score_dataset(&test, &NuisanceSpec::default(), "y", 32).unwrap();
    let learned_value = evaluate(&test_scores, &learned.rule.assign(&test).unwrap(), test.cost()).unwrap();
    let optimal_value = evaluate(&test_scores, &truth.true_action, test.cost()).unwrap();
    assert!(optimal_value.value.estimate + 3.0 * optimal_value.value.se >= learned_value.value.estimate);
}

fn spread_effect_spec() -> DgpSpec {
    DgpSpec {
        name: "spread-effect".into(),
        version: 1,
        features: vec![
            FeatureSpec { name: "x_1".into(), dist: FeatureDist::Normal { mean: 0.0, sd: 1.0, round_to: None } },
            FeatureSpec { name: "x_2".into(), dist: FeatureDist::Uniform { lo: 0.0, hi: 1.0, levels: None } },
        ],
        strata: vec![StratumSpec::Bins { name: "z_1".into(), feature: "x_1".into(), cutpoints: vec![0.0] }],
        propensity: PropensityTable::uniform(0.5),
        baseline: Surface::linear(10.0, &[("x_2", 1.0)]),
        effect: Surface::linear(1.0, &[("x_1", 3.0)]),
        noise: NoiseSpec::Normal { sd: 4.0 },
        zero_inflation: 0.0,
        cost: 1.16,
        donation_indicator: false,
    }
}

#[test]
fn extreme_groups_separate_on_the_effect_driver_only() {
    let (ds, _) = generate(&spread_effect_spec(), N, 41).unwrap();
    let groups = extreme_group_summary(&ds, "y", 0.1).unwrap();
    assert_eq!(groups.group_size, N / 10);
    let row = |f: &str| groups.rows.iter().find(|r| r.feature == f).unwrap();
    let driver = row("x_1");
    assert!(driver.top_mean > driver.bottom_mean);
    let independent = row("x_2");
    assert!(independent.difference.estimate.abs() <= 3.0 * independent.difference.se, "{independent:?}");
}

fn located_spec(mean: f64) -> DgpSpec {
    DgpSpec {
        name: "located".into(),
        version: 1,
        features: vec![FeatureSpec { name: "x_1".into(), dist: FeatureDist::Normal { mean, sd: 1.0, round_to: None } }],
        strata: vec![StratumSpec::Bins { name: "z_1".into(), feature: "x_1".into(), cutpoints: vec![0.0] }],
        propensity: PropensityTable::uniform(0.5),
        baseline: Surface::constant(10.0),
        effect: Surface::step("x_1", 0.5, Surface::constant(0.0), Surface::constant(3.0)),
        noise: NoiseSpec::Normal { sd: 2.0 },
        zero_inflation: 0.0,
        cost: 1.16,
        donation_indicator: false,
    }
}

#[test]
fn tight_caliper_restores_the_gain_seen_on_the_source_sample() {
    let (a, _) = generate(&located_spec(1.0), N, 51).unwrap();
    let (b, _) = generate(&located_spec(-0.5), N, 52).unwrap();
    let rule = Rule::Tree(TreeRule {
        features: vec!["x_1".into()],
        max_depth: 1,
        tree: PolicyTree::split(0, 0.5, PolicyTree::constant(-1), PolicyTree::constant(1)),
    });
    let sweep = transfer_with_radius_sweep(&rule, &a, &b, &[1e-5, f64::INFINITY], &NuisanceSpec::default(), "y", 5).unwrap();
    let tight = sweep[0].report.as_ref().unwrap();
    let full = sweep[1].report.as_ref().unwrap();
    assert!(sweep[0].matched_b < sweep[1].matched_b);
    assert!(tight.vs_none.estimate > full.vs_none.estimate, "tight {:?} full {:?}", tight.vs_none, full.vs_none);
}
