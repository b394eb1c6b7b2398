use dmr::ontology::{parse_ontology, Ontology};
use proptest::prelude::*;

/// A forest of `parents.len()` types hanging under Intent or Entity, plus
/// argument lines drawn from `args`.
fn forest_source(parents: &[usize], args: &[(usize, u8, usize)]) -> String {
    let name = |i: usize| format!("T{i}");
    let parent = |i: usize| match parents[i] {
        0 => "Intent".to_string(),
        1 => "Entity".to_string(),
        p => {
            let p = (p - 2) % i.max(1);
            if i == 0 { "Entity".to_string() } else { name(p) }
        }
    };
    let mut out = String::new();
    for i in 0..parents.len() {
        out.push_str(&format!("{} <- {}\n", parent(i), name(i)));
    }
    for &(src, label, dst) in args {
        let (src, dst) = (src % parents.len(), dst % parents.len());
        out.push_str(&format!("{}.arg{} -> {}\n", name(src), label % 4, name(dst)));
    }
    out
}

fn forest() -> impl Strategy<Value = Ontology> {
    (
        prop::collection::vec(0usize..60, 1..50),
        prop::collection::vec((0usize..50, any::<u8>(), 0usize..50), 0..20),
    )
        .prop_map(|(p, a)| parse_ontology(&forest_source(&p, &a)).expect("forest sources parse"))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn subtype_is_partial_order(o in forest()) {
        let names: Vec<String> = o.types().map(|t| t.name.clone()).collect();
        for a in &names {
            prop_assert!(o.is_subtype(a, a).unwrap());
            for b in &names {
                let ab = o.is_subtype(a, b).unwrap();
                if a != b && ab {
                    prop_assert!(!o.is_subtype(b, a).unwrap());
                }
                if ab {
                    for c in &names {
                        if o.is_subtype(b, c).unwrap() {
                            prop_assert!(o.is_subtype(a, c).unwrap());
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn arguments_are_inherited(o in forest()) {
        for t in o.types() {
            let Some(parent) = &t.parent else { continue };
            let own = o.resolve_arguments(&t.name).unwrap();
            for (label, spec) in o.resolve_arguments(parent).unwrap() {
                if !t.own_args.contains_key(&label) {
                    prop_assert_eq!(own.get(&label), Some(&spec));
                }
            }
        }
    }

    #[test]
    fn render_reaches_fixed_point(o in forest()) {
        let once = parse_ontology(&o.render()).unwrap();
        let twice = parse_ontology(&once.render()).unwrap();
        prop_assert_eq!(&once, &twice);
        prop_assert_eq!(&once, &o);
    }
}

#[test]
fn builtin_domain_renders_back() {
    let o = Ontology::fastfood();
    assert_eq!(parse_ontology(&o.render()).unwrap(), o);
}
