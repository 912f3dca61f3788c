//! Round-trip and robustness of the candidate language.

use proptest::prelude::*;
use sindy_core::features::{parse_term, FeatureLibrarySpec, LibraryPart};
use sindy_core::sparse_opt::OptimizerSpec;
use sindy_core::specdsl::{extract_blocks, parse_candidate, CandidateSpec};

fn part() -> impl Strategy<Value = LibraryPart> {
    prop_oneof![
        (1u32..=6, any::<bool>(), any::<bool>()).prop_map(|(degree, include_interaction, include_bias)| {
            LibraryPart::Polynomial { degree, include_interaction, include_bias }
        }),
        (1u32..=8, any::<bool>()).prop_map(|(n_frequencies, c)| LibraryPart::Fourier {
            n_frequencies,
            include_sin: true,
            include_cos: c,
        }),
        prop::sample::subsequence(vec!["exp(x0)", "log(abs(x0) + 1)", "x0/(1 + x1^2)"], 1..3)
            .prop_filter_map("valid terms", |ts| {
                let terms: Result<Vec<_>, _> = ts.iter().map(|t| parse_term(t, 2)).collect();
                terms.ok().map(|terms| LibraryPart::Custom { terms })
            }),
    ]
}

fn optimizer() -> impl Strategy<Value = OptimizerSpec> {
    prop_oneof![
        (0.0f64..2.0, 0.0f64..1.0, 1usize..50).prop_map(|(t, a, m)| {
            let mut s = OptimizerSpec::stlsq(t);
            s.ridge_alpha = a;
            s.max_iter = m;
            s
        }),
        (0.0f64..2.0, 0.01f64..10.0).prop_map(|(t, nu)| {
            let mut s = OptimizerSpec::sr3(t);
            s.nu = nu;
            s
        }),
        Just(OptimizerSpec::least_squares()),
    ]
}

proptest! {
    #[test]
    fn serialize_then_parse_is_identity(parts in prop::collection::vec(part(), 1..4), opt in optimizer()) {
        let Ok(lib) = FeatureLibrarySpec::new(parts) else { return Ok(()) };
        if lib.compile(2).is_err() {
            return Ok(());
        }
        let spec = CandidateSpec::new(lib, opt);
        let parsed = parse_candidate(&spec.serialize(), 2).unwrap();
        prop_assert!(parsed.warnings.is_empty());
        prop_assert_eq!(parsed.spec, spec);
    }

    #[test]
    fn arbitrary_text_never_panics(s in "\\PC{0,400}") {
        if let Err(d) = parse_candidate(&s, 3) {
            prop_assert!(d.iter().any(|d| d.is_error()));
        }
        let _ = extract_blocks(&s);
    }

    #[test]
    fn toml_shaped_noise_never_panics(
        lines in prop::collection::vec(
            prop_oneof![
                Just("[[library]]".to_string()),
                Just("[optimizer]".to_string()),
                Just("type = \"polynomial\"".to_string()),
                Just("type = \"custom\"".to_string()),
                Just("type = \"SR3\"".to_string()),
                "(degree|threshold|nu|terms|n_frequencies|max_iter|alpha) = (-?[0-9]{1,12}(\\.[0-9]+)?|\\[\"[x0-9()+* ]{0,12}\"\\]|true|\"x\")",
            ],
            0..12,
        ),
    ) {
        let block = lines.join("\n");
        if let Err(d) = parse_candidate(&block, 2) {
            prop_assert!(d.iter().any(|d| d.is_error()));
        }
    }
}
