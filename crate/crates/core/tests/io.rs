use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use subriemann::calculus::forms;
use subriemann::expr::{c, var, Expr, Polynomial};
use subriemann::io::{
    load_structure, load_test_functions, FunctionSpec, NamedFunction, StructureFile, TestFunctionFile,
    TESTFN_FORMAT,
};
use subriemann::models::{build, ModelName};
use subriemann::structure::ChartPoint;

const N: usize = 3;

fn expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (-3.0f64..3.0).prop_map(c),
        (0..N).prop_map(var),
        prop::collection::vec((prop::collection::vec(0u32..3, N), -2.0f64..2.0), 1..4)
            .prop_map(|t| Expr::Poly(Polynomial::new(N, t))),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a + b),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a - b),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a * b),
            inner.clone().prop_map(|a| -a),
            inner.clone().prop_map(Expr::sin),
            inner.clone().prop_map(Expr::cos),
            (inner, 0i32..4).prop_map(|(a, n)| Expr::Powi(Box::new(a), n)),
        ]
    })
}

fn same(a: f64, b: f64) -> bool {
    a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn test_functions_round_trip_through_json(e in expr(), x in prop::array::uniform3(-2.0f64..2.0)) {
        let file = TestFunctionFile {
            format: TESTFN_FORMAT.into(),
            chart_dim: N,
            functions: vec![NamedFunction { id: "f".into(), value: FunctionSpec::Expr(e.clone()) }],
        };
        let text = serde_json::to_string(&file).unwrap();
        let back: TestFunctionFile = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(&back, &file);
        let fields = load_test_functions(&text).unwrap();
        prop_assert_eq!(fields.len(), 1);
        prop_assert!(same(fields[0].value(&x), e.eval_f64(&x)));
    }

    #[test]
    fn truncated_structure_files_are_rejected(name in prop::sample::select(ModelName::ALL.to_vec()), cut in 0.0f64..1.0) {
        let (s, desc) = build(name);
        let text = StructureFile::from_structure(&s, Some(&desc)).to_json().unwrap();
        let end = ((text.len() as f64 * cut) as usize).min(text.len() - 1);
        if text.is_char_boundary(end) {
            prop_assert!(load_structure(&text[..end]).is_err());
        }
    }

    #[test]
    fn structure_files_preserve_the_calculus(name in prop::sample::select(ModelName::ALL.to_vec()), seed in 0u64..1000) {
        let (s, desc) = build(name);
        let text = StructureFile::from_structure(&s, Some(&desc)).to_json().unwrap();
        let (back, bdesc) = load_structure(&text).unwrap();
        let x: ChartPoint = desc.sample_point(&mut ChaCha8Rng::seed_from_u64(seed));
        let f = subriemann::bochner::random_field(&desc, seed, 0, 3, subriemann::calculus::Backend::PolynomialExact);
        let a = forms(&s, &f, &x).unwrap();
        let b = forms(&back, &f, &x).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(bdesc.certified, desc.certified);
    }
}

#[test]
fn wrong_variables_and_formats_are_rejected() {
    let bad_var = TestFunctionFile {
        format: TESTFN_FORMAT.into(),
        chart_dim: 2,
        functions: vec![NamedFunction { id: "f".into(), value: FunctionSpec::Expr(var(2)) }],
    };
    assert!(load_test_functions(&serde_json::to_string(&bad_var).unwrap()).is_err());
    let bad_poly = TestFunctionFile {
        functions: vec![NamedFunction { id: "p".into(), value: FunctionSpec::Poly(vec![(vec![1, 0, 0], 1.0)]) }],
        ..bad_var.clone()
    };
    assert!(load_test_functions(&serde_json::to_string(&bad_poly).unwrap()).is_err());
    let wrong_format = TestFunctionFile { format: "srs-v1".into(), functions: vec![], ..bad_var };
    assert!(load_test_functions(&serde_json::to_string(&wrong_format).unwrap()).is_err());
    assert!(load_structure("{}").is_err());
    assert!(load_structure(r#"{"format":"srs-v1","name":"x","d":2,"h":0,"chart_dim":2,"model":"torus"}"#).is_err());
}
