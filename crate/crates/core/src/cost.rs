//! Analytic replay update-cost model.
//!
//! Injecting a replay batch at hidden level n updates every parameter block
//! downstream of that level and nothing else. With `P_n` the parameter
//! count of the layer consuming level-n features (for the deepest level,
//! the output head), a strategy `S = [f_0, ..., f_{H-1}]` performs
//!
//!   U(S) = sum_n (f_0 + ... + f_n) * P_n
//!
//! parameter updates per replay unit, and its cost relative to replaying
//! everything at level 0 is R(S) = U(S) / U([1, 0, ..., 0]).
//!
//! The block list deliberately excludes the extractor-to-hidden-0 layer:
//! level 0 is the shallowest injection point, so that block never receives
//! replay gradients and the published relative costs are reproduced only
//! under this accounting.

use serde::{Deserialize, Serialize};

use crate::arch::ClassifierSpec;
use crate::error::{Error, Result};
use crate::replay::ReplayStrategy;

/// Per-level parameter blocks `[P_0, ..., P_{H-1}]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    blocks: Vec<f64>,
}

/// Derive the block list from an architecture. `include_biases` switches
/// from weights-only accounting (the default used in reports) to
/// weight-plus-bias accounting.
pub fn blocks_from_spec(spec: &ClassifierSpec, include_biases: bool) -> CostModel {
    let h = spec.hidden_widths.len();
    let mut blocks = Vec::with_capacity(h);
    for n in 0..h {
        let out = if n + 1 < h {
            spec.hidden_widths[n + 1]
        } else {
            spec.num_classes
        };
        let mut p = (spec.hidden_widths[n] * out) as f64;
        if include_biases {
            p += out as f64;
        }
        blocks.push(p);
    }
    CostModel { blocks }
}

impl CostModel {
    pub fn new(blocks: Vec<f64>) -> Result<Self> {
        if blocks.is_empty() || blocks.iter().any(|&p| p <= 0.0) {
            return Err(Error::config("cost model blocks must be positive"));
        }
        Ok(CostModel { blocks })
    }

    pub fn blocks(&self) -> &[f64] {
        &self.blocks
    }

    pub fn num_levels(&self) -> usize {
        self.blocks.len()
    }

    fn check_strategy(&self, strategy: &ReplayStrategy) -> Result<()> {
        if strategy.len() != self.blocks.len() {
            return Err(Error::config(format!(
                "strategy has {} levels but the cost model has {}",
                strategy.len(),
                self.blocks.len()
            )));
        }
        Ok(())
    }

    /// Parameter updates per replay unit under `strategy`.
    pub fn updates(&self, strategy: &ReplayStrategy) -> Result<f64> {
        self.check_strategy(strategy)?;
        let mut cum = 0.0;
        let mut u = 0.0;
        for (f, p) in strategy.frequencies().iter().zip(&self.blocks) {
            cum += f;
            u += cum * p;
        }
        Ok(u)
    }

    /// Updates under the all-at-level-0 baseline: the sum of all blocks.
    pub fn baseline_updates(&self) -> f64 {
        self.blocks.iter().sum()
    }

    /// Relative cost R(S) = U(S) / U([1, 0, ..., 0]), in (0, 1].
    pub fn relative_cost(&self, strategy: &ReplayStrategy) -> Result<f64> {
        let base = self.baseline_updates();
        if base <= 0.0 {
            return Err(Error::config("degenerate cost model: zero baseline"));
        }
        Ok(self.updates(strategy)? / base)
    }
}

/// Empirical counterpart of [`CostModel::updates`]: run instrumented replay
/// steps against a synthetic feature buffer and report the average
/// weight-gradient touches per replayed sample. Matches the analytic value
/// up to batch-apportionment rounding.
pub fn measured_updates(
    classifier: &mut crate::arch::Classifier,
    strategy: &ReplayStrategy,
    replay_batch: usize,
    steps: usize,
    seed: u64,
) -> Result<f64> {
    if !classifier.instrumented() {
        return Err(Error::Unavailable(
            "gradient-touch instrumentation is disabled on this classifier".into(),
        ));
    }
    if strategy.len() != classifier.num_levels() {
        return Err(Error::config(format!(
            "strategy has {} levels but the classifier has {}",
            strategy.len(),
            classifier.num_levels()
        )));
    }
    if replay_batch == 0 || steps == 0 {
        return Err(Error::config("replay batch and step count must be positive"));
    }
    let mut rng = crate::nn::init::rng_for(seed, "measured-updates");
    let buffer = crate::replay::FeatureBuffer::synthetic(classifier, 64, &mut rng);
    let opt = crate::nn::Adam::default();
    classifier.reset_touches();
    let mut total = 0u64;
    for _ in 0..steps {
        crate::replay::replay_step_buffer(classifier, &buffer, strategy, replay_batch, &opt, 1.0, &mut rng)?;
        total += classifier.collect_touches(true);
        classifier.reset_touches();
    }
    Ok(total as f64 / steps as f64 / replay_batch as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::ClassifierSpec;

    fn strat(f: &[f64]) -> ReplayStrategy {
        ReplayStrategy::new(f.to_vec()).unwrap()
    }

    #[test]
    fn arch1_blocks_weights_only() {
        let spec = ClassifierSpec::preset("ARCH1").unwrap();
        let m = blocks_from_spec(&spec, false);
        assert_eq!(m.blocks(), &[4_000_000.0, 200_000.0]);
    }

    #[test]
    fn arch2_blocks_weights_only() {
        let spec = ClassifierSpec::preset("ARCH2").unwrap();
        let m = blocks_from_spec(&spec, false);
        assert_eq!(m.blocks(), &[1_000_000.0, 1_000_000.0, 100_000.0]);
    }

    #[test]
    fn arch1_blocks_with_biases() {
        let spec = ClassifierSpec::preset("ARCH1").unwrap();
        let m = blocks_from_spec(&spec, true);
        assert_eq!(m.blocks(), &[4_002_000.0, 200_100.0]);
    }

    #[test]
    fn updates_direct_evaluation() {
        let spec = ClassifierSpec::preset("ARCH1").unwrap();
        let m = blocks_from_spec(&spec, false);
        let u = m.updates(&strat(&[0.5, 0.5])).unwrap();
        assert!((u - 2_200_000.0).abs() < 1e-6);

        let spec2 = ClassifierSpec::preset("ARCH2").unwrap();
        let m2 = blocks_from_spec(&spec2, false);
        let u2 = m2.updates(&strat(&[0.2, 0.3, 0.5])).unwrap();
        assert!((u2 - 800_000.0).abs() < 1e-6);
    }

    #[test]
    fn internal_replay_is_the_baseline_maximum() {
        for preset in ClassifierSpec::PRESETS {
            let spec = ClassifierSpec::preset(preset).unwrap();
            let m = blocks_from_spec(&spec, false);
            let ir = ReplayStrategy::internal_replay(spec.num_levels());
            let u = m.updates(&ir).unwrap();
            assert!((u - m.baseline_updates()).abs() < 1e-9);
            assert!((m.relative_cost(&ir).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn published_relative_costs_reproduced() {
        let cases1 = [([0.7, 0.3], 71.4), ([0.5, 0.5], 52.4), ([0.3, 0.7], 33.3)];
        let spec1 = ClassifierSpec::preset("ARCH1").unwrap();
        let m1 = blocks_from_spec(&spec1, false);
        for (s, want) in cases1 {
            let r = m1.relative_cost(&strat(&s)).unwrap() * 100.0;
            assert!((r - want).abs() < 0.05, "ARCH1 {s:?}: {r} vs {want}");
        }
        let cases2 = [
            ([0.5, 0.3, 0.2], 66.7),
            ([0.34, 0.33, 0.33], 52.9),
            ([0.2, 0.3, 0.5], 38.1),
        ];
        let spec2 = ClassifierSpec::preset("ARCH2").unwrap();
        let m2 = blocks_from_spec(&spec2, false);
        for (s, want) in cases2 {
            let r = m2.relative_cost(&strat(&s)).unwrap() * 100.0;
            assert!((r - want).abs() < 0.05, "ARCH2 {s:?}: {r} vs {want}");
        }
    }

    #[test]
    fn bias_accounting_preserves_one_decimal_r_values() {
        let spec = ClassifierSpec::preset("ARCH1").unwrap();
        let m = blocks_from_spec(&spec, true);
        for (s, want) in [([0.7, 0.3], 71.4), ([0.5, 0.5], 52.4), ([0.3, 0.7], 33.3)] {
            let r = m.relative_cost(&strat(&s)).unwrap() * 100.0;
            assert!(((r * 10.0).round() / 10.0 - want).abs() < 1e-9);
        }
    }

    #[test]
    fn depth_monotonicity_of_updates() {
        let spec = ClassifierSpec::preset("ARCH2").unwrap();
        let m = blocks_from_spec(&spec, false);
        // move mass eps from level a to deeper level b: U drops by eps * sum(P_a..P_{b-1})
        let eps = 0.1;
        let base = m.updates(&strat(&[0.4, 0.3, 0.3])).unwrap();
        let moved = m.updates(&strat(&[0.3, 0.3, 0.4])).unwrap();
        let expected_drop = eps * (m.blocks()[0] + m.blocks()[1]);
        assert!((base - moved - expected_drop).abs() < 1e-6);
    }

    #[test]
    fn deepest_one_hot_measures_exactly_the_output_block() {
        // counts are exact for a one-hot strategy, so the measured value
        // equals P_{H-1} with no rounding slack
        let spec = ClassifierSpec::preset("FMNIST3").unwrap();
        let mut c = crate::arch::build_classifier(&spec, 0).unwrap();
        let s = strat(&[0.0, 0.0, 1.0]);
        let measured = measured_updates(&mut c, &s, 128, 2, 7).unwrap();
        assert_eq!(measured, 500.0, "50 x 10 output block");
    }

    #[test]
    fn strategy_length_mismatch_is_config_error() {
        let spec = ClassifierSpec::preset("ARCH1").unwrap();
        let m = blocks_from_spec(&spec, false);
        assert!(matches!(
            m.updates(&strat(&[0.2, 0.3, 0.5])),
            Err(Error::Config(_))
        ));
    }
}
