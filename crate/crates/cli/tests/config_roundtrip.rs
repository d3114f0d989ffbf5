use adamlab::quadbench::Layout;
use adamlab::signal::FilterKind;
use adamlab::{ClipConfig, EpsilonPlacement, InitMode, OptimizerConfig, OptimizerKind};
use adamlab_cli::ExperimentConfig;
use proptest::prelude::*;

fn unit() -> impl Strategy<Value = f64> {
    (0.0f64..1.0).prop_filter("below one", |b| *b < 1.0)
}

fn positive() -> impl Strategy<Value = f64> {
    prop_oneof![1e-12f64..1e-3, 1e-3f64..1e3]
}

fn optimizer() -> impl Strategy<Value = OptimizerConfig> {
    (
        prop::sample::select(OptimizerKind::ALL.to_vec()),
        unit(),
        unit(),
        prop::option::of(positive()),
        any::<bool>(),
        0.0f64..1.0,
        any::<bool>(),
        prop::option::of(positive()),
        prop::option::of(positive()),
    )
        .prop_map(|(kind, b1, b2, eps, inside, wd, first, gclip, cclip)| {
            let mut c = OptimizerConfig::for_kind(kind, b1);
            if kind == OptimizerKind::Adam {
                c.beta2 = b2;
            }
            if let Some(e) = eps {
                let place = if inside {
                    EpsilonPlacement::InsideSqrt
                } else {
                    EpsilonPlacement::OutsideSqrt
                };
                c = c.with_epsilon(e, place);
            }
            if first {
                c = c.with_init_mode(InitMode::FirstSampleInit);
            }
            // coordinatewise clipping only exists for SGD
            let cclip = cclip.filter(|_| kind == OptimizerKind::Sgd);
            c.with_weight_decay(wd).with_clip(ClipConfig {
                gclip_threshold: gclip,
                cclip_bound: cclip,
            })
        })
}

fn seeds() -> impl Strategy<Value = Vec<u64>> {
    prop::collection::vec(0u64..=i64::MAX as u64, 1..6)
}

fn config() -> impl Strategy<Value = ExperimentConfig> {
    (
        0u64..=i64::MAX as u64,
        prop::collection::vec(optimizer(), 1..4),
        prop::collection::vec(positive(), 1..6),
        seeds(),
        prop::sample::subsequence(vec![Layout::Heterogeneous, Layout::Homogeneous], 1..=2),
        prop::collection::vec(0.0f64..2.0, 0..4),
        prop::sample::subsequence(FilterKind::ALL.to_vec(), 1..=4),
        unit(),
        (0.0f64..0.1, 1usize..5000, any::<bool>()),
        seeds(),
        prop::collection::vec(positive(), 1..6),
    )
        .prop_map(
            |(
                seed,
                opts,
                lrs,
                qseeds,
                layouts,
                eps,
                filters,
                beta,
                (decay, len, eq),
                sseeds,
                slrs,
            )| {
                let mut c = ExperimentConfig {
                    seed,
                    ..ExperimentConfig::default()
                };
                c.quad.optimizers = opts;
                c.quad.lr_grid = lrs;
                c.quad.seeds = qseeds;
                c.quad.layouts = layouts;
                c.quad.ablation_epsilons = eps;
                c.signal.filters = filters;
                c.signal.beta = beta;
                c.signal.decay = decay;
                c.signal.length = len;
                c.sweep.equal_betas = eq;
                c.sweep.seeds = sseeds;
                c.sweep.lr_grid = slrs;
                c
            },
        )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn parse_of_serialize_is_identity(c in config()) {
        let text = c.to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        prop_assert_eq!(&back, &c);
        // serialization is stable, so config files diff cleanly
        prop_assert_eq!(back.to_toml().unwrap(), text);
    }
}
