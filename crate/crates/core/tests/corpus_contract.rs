use std::collections::HashMap;

use halluguard::mockgen::{generate, InjectRates, MockSpec};
use halluguard::pipeline::{default_rules, run_cycle, PipelineConfig};
use halluguard::records::FailureClass;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn injected_records_fire_their_family(
        seed in any::<u64>(),
        samples in 2usize..8,
        vocab in 4usize..16,
    ) {
        let spec = MockSpec {
            n_records: 60,
            samples_per_record: samples,
            vocab_size: vocab,
            inject_rates: InjectRates { model: 0.2, context: 0.2, data: 0.2 },
            seed,
            ..Default::default()
        };
        let (records, store) = generate(&spec).unwrap();
        let rules = default_rules();
        let tier: HashMap<&str, FailureClass> = rules.iter().map(|r| (r.name.as_str(), r.tier)).collect();
        let cfg = PipelineConfig::default();
        let ledger = run_cycle(&records, &cfg, Some(&store), &rules, "t").unwrap();
        for (r, e) in records.iter().zip(&ledger.entries) {
            let fired: Vec<FailureClass> = e.verdict.fired_rules.iter().map(|n| tier[n.as_str()]).collect();
            match r.ground_truth.as_ref().unwrap().failure_class {
                Some(c) => prop_assert!(fired.contains(&c), "{} {:?}", r.id, e.verdict.fired_rules),
                None => prop_assert!(fired.is_empty(), "clean {} fired {:?}", r.id, e.verdict.fired_rules),
            }
        }
        let s = &ledger.summary;
        prop_assert_eq!(s.pass + s.tiered, s.total);
        prop_assert!(s.residuals <= s.tiered);

        let again = run_cycle(&records, &cfg, Some(&store), &rules, "t").unwrap();
        prop_assert_eq!(again, ledger);
    }
}
