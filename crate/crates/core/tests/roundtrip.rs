use std::path::PathBuf;

use archon_core::model::ExternalStream;
use archon_core::parser::ast::*;
use archon_core::parser::{format, format_library, parse, parse_library};
use proptest::prelude::*;

fn corpus() -> Vec<(String, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/corpus");
    let mut files: Vec<_> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "arch"))
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| {
            (
                p.display().to_string(),
                std::fs::read_to_string(&p).unwrap(),
            )
        })
        .collect()
}

#[test]
fn corpus_is_large_enough() {
    assert!(corpus().len() >= 20);
}

#[test]
fn corpus_round_trips() {
    for (name, text) in corpus() {
        let first = parse(&text).unwrap_or_else(|e| panic!("{name}: {e:?}"));
        let printed = format(&first);
        let second =
            parse(&printed).unwrap_or_else(|e| panic!("{name} reprinted: {e:?}\n{printed}"));
        assert_eq!(first.strip_spans(), second.strip_spans(), "{name}");
        assert_eq!(format(&second), printed, "{name}: not idempotent");
    }
}

#[test]
fn library_round_trips() {
    let text = "porttype Audio;\ncomponenttype Mixer { port a : Audio many; port out : StreamOut; }\n\
                connectortype Bus { role tx accepts Audio, StreamOut fill 1..*; role rx accepts Audio fill 0..2; }\n";
    let lib = parse_library(0, text).unwrap();
    let again = parse_library(0, &format_library(&lib)).unwrap();
    assert_eq!(lib.strip_spans(), again.strip_spans());
}

fn ident() -> impl Strategy<Value = Ident> {
    // upper-case first letter keeps clear of every keyword
    "[A-Z][A-Za-z0-9_]{0,5}".prop_map(|s| Ident::new(&s))
}

fn text() -> impl Strategy<Value = String> {
    "[ -~\n\t]{0,12}"
}

fn attr() -> impl Strategy<Value = AttrKind> {
    prop_oneof![
        text().prop_map(AttrKind::Impl),
        (0u32..100).prop_map(AttrKind::Replicas),
        (0u32..10).prop_map(AttrKind::Layer),
        Just(AttrKind::Stateless),
        text().prop_map(AttrKind::Seed),
        text().prop_map(AttrKind::Site),
    ]
}

fn typedef() -> impl Strategy<Value = TypeDef> {
    let port = (ident(), ident(), any::<bool>()).prop_map(|(name, port_type, many)| PortDecl {
        name,
        port_type,
        many,
        span: Default::default(),
    });
    let role = (
        ident(),
        prop::collection::vec(ident(), 1..3),
        0u32..4,
        prop::option::of(0u32..9),
    )
        .prop_map(|(name, accepts, min, max)| RoleDecl {
            name,
            accepts,
            min,
            max,
            span: Default::default(),
        });
    prop_oneof![
        ident().prop_map(|name| TypeDef::Port {
            name,
            span: Default::default()
        }),
        (ident(), prop::collection::vec(port, 0..4)).prop_map(|(name, ports)| TypeDef::Component(
            ComponentTypeDecl {
                name,
                ports,
                span: Default::default()
            }
        )),
        (ident(), prop::collection::vec(role, 0..3)).prop_map(|(name, roles)| TypeDef::Connector(
            ConnectorTypeDecl {
                name,
                roles,
                span: Default::default()
            }
        )),
    ]
}

fn item() -> impl Strategy<Value = Item> {
    let z = Default::default;
    prop_oneof![
        typedef().prop_map(Item::Type),
        (ident(), ident(), prop::collection::vec(attr(), 0..4)).prop_map(
            move |(name, type_name, attrs)| {
                Item::Component(ComponentDecl {
                    name,
                    type_name,
                    attrs: attrs
                        .into_iter()
                        .map(|kind| Attr { kind, span: z() })
                        .collect(),
                    span: z(),
                })
            }
        ),
        (ident(), ident()).prop_map(move |(name, type_name)| Item::Connector(ConnectorDecl {
            name,
            type_name,
            span: z()
        })),
        (ident(), ident(), ident(), ident()).prop_map(move |(instance, port, connector, role)| {
            Item::Attach(AttachDecl {
                instance,
                port,
                connector,
                role,
                span: z(),
            })
        }),
        (ident(), prop::collection::vec(ident(), 1..5)).prop_map(move |(name, stages)| {
            Item::Pipeline(PipelineDecl {
                name,
                stages,
                span: z(),
            })
        }),
        (any::<bool>(), text()).prop_map(move |(input, path)| Item::Io(IoDecl {
            stream: if input {
                ExternalStream::Input
            } else {
                ExternalStream::Output
            },
            path,
            span: z(),
        })),
    ]
}

fn system() -> impl Strategy<Value = SystemAst> {
    (
        ident(),
        prop::option::of(ident()),
        any::<bool>(),
        prop::collection::vec(item(), 0..8),
    )
        .prop_map(|(name, style, skip, items)| SystemAst {
            name,
            allow_skip: skip && style.is_some(),
            style,
            items,
            span: Default::default(),
        })
}

proptest! {
    #[test]
    fn generated_systems_round_trip(ast in system()) {
        let printed = format(&ast);
        let parsed = parse(&printed).map_err(|e| TestCaseError::fail(format!("{e:?}\n{printed}")))?;
        prop_assert_eq!(parsed.strip_spans(), ast.strip_spans());
        prop_assert_eq!(format(&parsed), printed);
    }

    #[test]
    fn parser_never_panics(src in "[a-z{}();:.|\" \n0-9*]{0,80}") {
        let _ = parse(&src);
    }
}
