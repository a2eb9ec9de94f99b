use proptest::prelude::*;

use llmwalk::harness::{normalized_walking_time, trial_seeds, EpisodeResult, ExperimentSummary, Termination};
use llmwalk::model::PdGains;
use llmwalk::sim::pd_torque;

fn result(trial: usize, walked: Option<f64>) -> EpisodeResult {
    let term = if walked.is_some() { Termination::Fell } else { Termination::Completed };
    EpisodeResult::from_outcome(trial, 0, 10.0, walked, term)
}

proptest! {
    #[test]
    fn seeds_are_prefix_stable(master in any::<u64>(), n in 1usize..20) {
        let long = trial_seeds(master, n + 5);
        prop_assert_eq!(&long[..n], &trial_seeds(master, n)[..]);
    }

    #[test]
    fn nwt_is_a_fraction(walked in 0.0..20.0f64, len in 0.1..20.0f64) {
        let v = normalized_walking_time(walked, len);
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn summary_recomputes_from_rows(falls in prop::collection::vec(prop::option::of(0.0..10.0f64), 1..12)) {
        let rows: Vec<_> = falls.iter().enumerate().rev().map(|(i, w)| result(i, *w)).collect();
        let s = ExperimentSummary::from_results("p", rows);
        let n = falls.len() as f64;
        let nwt: f64 = falls.iter().map(|w| w.map_or(1.0, |w| w / 10.0)).sum::<f64>() / n;
        let rate = falls.iter().filter(|w| w.is_none()).count() as f64 / n;
        prop_assert!((s.mean_nwt - nwt).abs() < 1e-12);
        prop_assert!((s.success_rate - rate).abs() < 1e-12);
        prop_assert!(s.trials.windows(2).all(|w| w[0].trial < w[1].trial));
    }

    #[test]
    fn pd_torque_respects_limits(
        kp in 0.0..100.0f64, kd in 0.0..5.0f64,
        xs in prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64, -50.0..50.0f64, 0.1..40.0f64), 1..12),
    ) {
        let g = PdGains { kp, kd };
        let (t, q, qd, lim): (Vec<_>, Vec<_>, Vec<_>, Vec<_>) = xs.iter().fold(Default::default(), |mut acc, &(a, b, c, d)| {
            acc.0.push(a); acc.1.push(b); acc.2.push(c); acc.3.push(d); acc
        });
        let tau = pd_torque(&g, &t, &q, &qd, &lim).unwrap();
        for i in 0..tau.len() {
            prop_assert!(tau[i].abs() <= lim[i]);
            let raw = kp * (t[i] - q[i]) - kd * qd[i];
            if raw.abs() <= lim[i] {
                prop_assert!((tau[i] - raw).abs() < 1e-12);
            }
        }
    }
}
