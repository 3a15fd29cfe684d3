use approx::assert_relative_eq;
use proptest::prelude::*;

use robust_choice::robust_feature::rf_objective;
use robust_choice::robust_label::{inner_relabel_minimization, relabel_bruteforce_oracle, rl_objective};
use robust_choice::{
    choice_probabilities, dual_norm_value, log_likelihood, worst_case_perturbation, ChoiceDataset, ChoiceObservation,
    Coefficients, FeatureUncertainty, LabelBudget, ModelSpec, NormOrder,
};

fn spec(n_alt: usize, n_feat: usize) -> ModelSpec {
    let mut mask = vec![vec![true; n_feat]; n_alt];
    mask[0] = vec![false; n_feat];
    ModelSpec::new(
        (0..n_alt).map(|i| format!("a{i}")).collect(),
        (0..n_feat).map(|k| format!("x{k}")).collect(),
        mask,
        0,
    )
    .unwrap()
}

prop_compose! {
    /// A three-alternative, two-feature problem with between 1 and 8 observations.
    fn problem()(
        free in prop::collection::vec(-2.0..2.0f64, 4),
        rows in prop::collection::vec(
            (prop::collection::vec(-2.0..2.0f64, 2), prop::sample::subsequence(vec![0usize, 1, 2], 2..=3), 0..3usize),
            1..=8,
        ),
    ) -> (ModelSpec, Coefficients, ChoiceDataset) {
        let spec = spec(3, 2);
        let beta = Coefficients::from_free(&spec, &free);
        let obs = rows
            .into_iter()
            .map(|(x, avail, pick)| {
                let chosen = avail[pick % avail.len()];
                ChoiceObservation::new(x, avail, chosen).unwrap()
            })
            .collect();
        let data = ChoiceDataset::new(spec.features().to_vec(), obs).unwrap();
        (spec, beta, data)
    }
}

fn order() -> impl Strategy<Value = NormOrder> {
    prop_oneof![Just(1.0), Just(1.5), Just(2.0), Just(3.0), Just(f64::INFINITY)]
        .prop_map(|p| NormOrder::new(p).unwrap())
}

proptest! {
    #[test]
    fn probabilities_form_a_distribution_over_available((spec, beta, data) in problem()) {
        for obs in data.iter() {
            let p = choice_probabilities(&spec, &beta, obs).unwrap();
            let total: f64 = p.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn dual_norm_is_homogeneous_and_attained(
        v in prop::collection::vec(-5.0..5.0f64, 1..6),
        p in order(),
        rho in 0.0..4.0f64,
        scale in 0.1..10.0f64,
    ) {
        let value = dual_norm_value(&v, p, rho).unwrap();
        prop_assert!(value >= 0.0);
        let scaled: Vec<f64> = v.iter().map(|a| a * scale).collect();
        assert_relative_eq!(dual_norm_value(&scaled, p, rho).unwrap(), scale * value, max_relative = 1e-12, epsilon = 1e-12);
        let star = worst_case_perturbation(&v, p, rho).unwrap();
        prop_assert!(p.norm(&star) <= rho * (1.0 + 1e-12) + 1e-15);
        let attained: f64 = v.iter().zip(&star).map(|(a, b)| a * b).sum();
        assert_relative_eq!(attained, value, max_relative = 1e-12, epsilon = 1e-12);
    }

    #[test]
    fn feature_robustness_only_lowers_the_objective(
        (spec, beta, data) in problem(),
        p in order(),
        rho in 0.0..2.0f64,
        extra in 0.0..2.0f64,
    ) {
        let ll = log_likelihood(&spec, &beta, &data).unwrap();
        let at = |r: f64| rf_objective(&spec, &beta, &data, &FeatureUncertainty::single(p, r).unwrap()).unwrap();
        prop_assert_eq!(at(0.0), ll);
        prop_assert!(at(rho) <= ll + 1e-12);
        prop_assert!(at(rho + extra) <= at(rho) + 1e-12);
    }

    #[test]
    fn label_robustness_only_lowers_the_objective(
        (spec, beta, data) in problem(),
        gamma in 0.0..10.0f64,
        extra in 0.0..3.0f64,
    ) {
        let ll = log_likelihood(&spec, &beta, &data).unwrap();
        let at = |g: f64| rl_objective(&spec, &beta, &data, &LabelBudget::new(g).unwrap()).unwrap();
        prop_assert_eq!(at(0.0), ll);
        prop_assert!(at(gamma) <= ll + 1e-12);
        prop_assert!(at(gamma + extra) <= at(gamma) + 1e-12);
        let (_, sel) = inner_relabel_minimization(&spec, &beta, &data, &LabelBudget::new(gamma).unwrap()).unwrap();
        prop_assert!(sel.total_fraction() <= gamma.min(data.len() as f64) + 1e-12);
    }

    #[test]
    fn closed_form_relabeling_matches_enumeration((spec, beta, data) in problem(), gamma in 0..=3u32) {
        let budget = LabelBudget::new(f64::from(gamma)).unwrap();
        let (r, _) = inner_relabel_minimization(&spec, &beta, &data, &budget).unwrap();
        let brute = relabel_bruteforce_oracle(&spec, &beta, &data, &budget).unwrap();
        prop_assert!((r - brute).abs() <= 1e-12, "{} vs {}", r, brute);
    }
}
