use std::path::PathBuf;

use ivgan::benchmarks::DatasetKind;
use ivgan::cli::config::{parse_config_with_env, RunConfig};
use ivgan::losses::{BaseLoss, RegularizationCoeffs};
use proptest::prelude::*;

fn dataset() -> impl Strategy<Value = DatasetKind> {
    prop_oneof![
        (1usize..8, 1usize..8, 0.1f64..5.0, 0.001f64..0.5)
            .prop_map(|(rows, cols, spacing, sigma)| DatasetKind::Grid { rows, cols, spacing, sigma }),
        (1usize..16, 0.1f64..5.0, 0.001f64..0.5)
            .prop_map(|(modes, radius, sigma)| DatasetKind::Ring { modes, radius, sigma }),
        (0.0f64..=1.0).prop_map(|a| DatasetKind::SquarePair { a }),
    ]
}

fn run_config() -> impl Strategy<Value = RunConfig> {
    let train = (
        prop::bool::ANY,
        (1usize..5, 1usize..4),
        2usize..512,
        (0u64..100_000, 1usize..4),
        (1e-6f64..1.0, 1e-6f64..1.0),
        (0.0f64..4.0, 0.0f64..4.0, 0.0f64..4.0, 0.0f64..4.0),
        (0.0f64..1.0, 0.0f64..=1.0),
        any::<u64>(),
        dataset(),
        prop::collection::vec(1usize..128, 1..4),
    );
    (train, prop::bool::ANY, prop::option::of(0u64..1000), 1000usize..500_000).prop_map(
        |((vanilla, (bw, k), batch, (total, inner), (lr_df, lr_e), (lg, mg, le, me), (s0, frac), seed, ds, hidden), plots, stop, mc)| {
            let mut c = RunConfig::default();
            let t = &mut c.train;
            t.base_loss = if vanilla { BaseLoss::Vanilla } else { BaseLoss::Lsgan };
            t.blocks = k;
            t.latent_dim = bw * k;
            t.batch_size = batch;
            t.total_iters = total;
            t.inner_iters = inner;
            t.lr_df = lr_df;
            t.lr_e = lr_e;
            t.coeffs = RegularizationCoeffs {
                lambda_gd: lg,
                mu_gd: mg,
                lambda_e: le,
                mu_e: me,
            };
            t.noise_sigma0 = s0;
            t.noise_decay_frac = frac;
            t.seed = seed;
            t.dataset = ds;
            t.hidden_widths = hidden;
            c.emit_plots = plots;
            c.stop_at = stop;
            c.mc_samples = mc;
            c.out_dir = PathBuf::from(format!("runs/{seed}"));
            c
        },
    )
}

proptest! {
    #[test]
    fn serialized_config_parses_back(cfg in run_config()) {
        let text = cfg.serialize();
        let back = parse_config_with_env(&text, &[], None).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.serialize(), text);
    }
}
