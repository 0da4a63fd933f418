use super::*;

const ASSIST: &str = "assist(X, Y, T3) ::= hasBall(X, T1); hasBall(Y, T2); shooting(Y, T3); ballInNet(T4) where {X != Y}";

#[test]
fn parses_sequence_rule() {
    let rs = parse_rules(ASSIST).unwrap();
    assert_eq!(rs.rules.len(), 1);
    let r = &rs.rules[0];
    assert_eq!(r.head_type, "assist");
    assert_eq!(r.rule_prob, 1.0);
    match &r.body {
        Pattern::Seq(cs) => {
            assert_eq!(cs.len(), 4);
            assert!(matches!(cs[0], Pattern::Sde(_)));
            assert!(matches!(cs[3], Pattern::Select(..)));
        }
        other => panic!("expected Seq, got {other:?}"),
    }
    let atoms = r.body.atoms();
    assert_eq!(atoms.len(), 4);
    assert_eq!(atoms[0].event_type, "hasBall");
    assert_eq!(atoms[3].event_type, "ballInNet");
    // uids assigned in preorder
    assert_eq!(atoms.iter().map(|a| a.uid).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
}

#[test]
fn rejects_recursive_definition() {
    let err = parse_rules("0.6::close_m(X, Y, T) ::= close_m(X, Y, Tp) where {next(T, Tp)}")
        .unwrap_err();
    assert_eq!(err.code(), "CYCLIC_HIERARCHY");
}

#[test]
fn rejects_mutual_recursion() {
    let err = parse_rules("a(T) ::= b(T)\nb(T) ::= a(T)").unwrap_err();
    assert_eq!(err.code(), "CYCLIC_HIERARCHY");
}

#[test]
fn empty_input_is_empty_ruleset() {
    let rs = parse_rules("").unwrap();
    assert!(rs.rules.is_empty());
    let rs = parse_rules("# just a comment\n").unwrap();
    assert!(rs.rules.is_empty());
}

#[test]
fn unbound_head_variable_rejected() {
    let err = parse_rules("ce(Z, T) ::= a(X, T)").unwrap_err();
    assert_eq!(err.code(), "UNBOUND_VARIABLE");
}

#[test]
fn traveling_style_negation_binds_from_positives() {
    let src = "traveling(P, T3) ::= \
               (hasBall(P1, T1) and takesStep(P1, T1) and not dribbling(P1, T1)); \
               (hasBall(P2, T2) and takesStep(P2, T2) and not dribbling(P2, T2)); \
               (hasBall(P3, T3) and takesStep(P3, T3) and not dribbling(P3, T3)) \
               where {P1 == P2, P2 == P3} emit {P = P3}";
    let rs = parse_rules(src).unwrap();
    assert!(validate_bindings(&rs.rules[0]).is_empty());
}

#[test]
fn negated_fresh_variable_is_unbound() {
    let err = parse_rules("ce(T2) ::= a(T1); not b(Z, T1); c(T2)").unwrap_err();
    assert_eq!(err.code(), "UNBOUND_VARIABLE");
}

#[test]
fn duplicate_head_same_body_needs_marker() {
    let src = "0.9::avoid(X, T) ::= waiting(X, T1); running(X, T)\n\
               0.7::avoid(X, T) ::= waiting(X, T1); running(X, T)";
    let err = parse_rules(src).unwrap_err();
    assert_eq!(err.code(), "DUPLICATE_HEAD_WITHOUT_DISJUNCTION_MARKER");
}

#[test]
fn same_head_different_bodies_is_a_combining_group() {
    let src = "0.9::avoid(X, Y, T2) ::= waiting(X, Y, T1); crossover_dribble(Y, T2)\n\
               0.7::avoid(X, Y, T2) ::= waiting(X, Y, T1); running(Y, T2)";
    let rs = parse_rules(src).unwrap();
    assert_eq!(rs.rules.len(), 2);
    assert!(rs.warnings.is_empty());
}

#[test]
fn head_prob_sum_checked() {
    let err = parse_rules("0.8::ce(A, T) ::= a(A, T) ;; 0.4::ce(A, T)").unwrap_err();
    assert_eq!(err.code(), "PROB_SUM_EXCEEDED");
}

#[test]
fn prefix_plus_disjunction_warns() {
    let rs = parse_rules("0.6::ce(A, T) ::= a(A, T) ;; 0.3::ce(A, T + 1)").unwrap();
    assert_eq!(rs.warnings.len(), 1);
    assert_eq!(rs.warnings[0].code, "PROB_PREFIX_WITH_DISJUNCTION");
}

#[test]
fn desugar_flattens_associativity() {
    fn atom(ty: &str) -> Pattern {
        Pattern::Sde(Atom {
            uid: 0,
            event_type: ty.into(),
            terms: vec![Term::Wildcard],
            pos: Pos::default(),
        })
    }
    let nested = Pattern::And(vec![atom("a"), Pattern::And(vec![atom("b"), atom("c")])]);
    match desugar(nested) {
        Pattern::And(cs) => assert_eq!(cs.len(), 3),
        other => panic!("expected flat And, got {other:?}"),
    }
    let nested = Pattern::Seq(vec![Pattern::Seq(vec![atom("a"), atom("b")]), atom("c")]);
    match desugar(nested) {
        Pattern::Seq(cs) => assert_eq!(cs.len(), 3),
        other => panic!("expected flat Seq, got {other:?}"),
    }
    let dup = Pattern::Or(vec![atom("a"), atom("a")]);
    match desugar(dup) {
        Pattern::Or(cs) => assert_eq!(cs.len(), 2),
        other => panic!("expected Or kept without dedup, got {other:?}"),
    }
}

#[test]
fn not_requires_atom_child() {
    let err = parse_rules("ce(T) ::= not (a(T1); b(T2)); c(T)").unwrap_err();
    assert_eq!(err.code(), "INVALID_PATTERN");
}

#[test]
fn star_body_may_not_emit() {
    let err = parse_rules("ce(T) ::= (a(X, T1) emit {V = X})*; b(T)").unwrap_err();
    assert_eq!(err.code(), "INVALID_PATTERN");
}

#[test]
fn syntax_error_is_positioned() {
    match parse_rules("ce(T) ::= a(T,") {
        Err(ParseError::Syntax { pos, .. }) => {
            assert_eq!(pos.line, 1);
            assert!(pos.col > 10);
        }
        other => panic!("expected syntax error, got {other:?}"),
    }
}

fn strip_expr(e: &mut Expr) {
    match e {
        Expr::Var(_, p) => *p = Pos::default(),
        Expr::Const(_) => {}
        Expr::Binary(_, l, r) => {
            strip_expr(l);
            strip_expr(r);
        }
    }
}

fn strip_pattern(p: &mut Pattern) {
    match p {
        Pattern::Sde(a) => a.pos = Pos::default(),
        Pattern::Seq(cs) | Pattern::Or(cs) | Pattern::And(cs) => {
            cs.iter_mut().for_each(strip_pattern)
        }
        Pattern::Star(c) | Pattern::Not(c) => strip_pattern(c),
        Pattern::Select(ps, c) => {
            for pr in ps.iter_mut() {
                pr.pos = Pos::default();
                strip_expr(&mut pr.lhs);
                strip_expr(&mut pr.rhs);
            }
            strip_pattern(c);
        }
        Pattern::Emit(ms, c) => {
            for m in ms.iter_mut() {
                m.pos = Pos::default();
                strip_expr(&mut m.expr);
            }
            strip_pattern(c);
        }
        Pattern::Window(_, c) => strip_pattern(c),
    }
}

#[test]
fn pretty_roundtrip_smoke() {
    let sources = [
        ASSIST,
        "0.9::avoid(X, Y, T2) ::= waiting(X, Y, T1); crossover_dribble(Y, T2)",
        "ce(T) ::= (a(X, T1) | b(X, T1)); c(X, T) within [0, 24]",
        "ce(T) ::= a(X, T1) and b(X, T1) and not c(X, T1); d(T) where {T - T1 <= 10}",
        "ce(V, T) ::= (a(X, T1); b(Y, T2))* ; stop(T) emit {V = X}",
        "0.5::ce(A, T) ::= a(A, T1); b(T) ;; 0.3::ce(A + 1, T)",
    ];
    for src in sources {
        let rs1 = parse_rules(src).unwrap_or_else(|e| panic!("{src}: {e}"));
        let printed = ruleset_to_string(&rs1);
        let rs2 = parse_rules(&printed).unwrap_or_else(|e| panic!("{printed}: {e}"));
        let printed2 = ruleset_to_string(&rs2);
        assert_eq!(printed, printed2, "fixed point failed for {src}");
        let strip = |rs: &RuleSet| {
            let mut rs = rs.clone();
            for r in &mut rs.rules {
                r.pos = Pos::default();
                strip_pattern(&mut r.body);
                for a in &mut r.alt_heads {
                    a.pos = Pos::default();
                    for e in &mut a.args {
                        strip_expr(e);
                    }
                }
                for e in &mut r.head_args {
                    strip_expr(e);
                }
            }
            rs
        };
        assert_eq!(strip(&rs1).rules, strip(&rs2).rules, "AST mismatch for {src}");
    }
}

mod props {
    use super::*;
    use proptest::prelude::*;

    fn arb_token() -> impl Strategy<Value = String> {
        prop_oneof![
            Just("a(".to_string()),
            Just(")".to_string()),
            Just("X".to_string()),
            Just(", ".to_string()),
            Just("; ".to_string()),
            Just(" | ".to_string()),
            Just(" and ".to_string()),
            Just("not ".to_string()),
            Just("*".to_string()),
            Just(" where {X == 1}".to_string()),
            Just(" within [0, 5]".to_string()),
            Just("::=".to_string()),
            Just("0.5::".to_string()),
            Just("ce(T)".to_string()),
            Just("b(X, T)".to_string()),
            Just("}".to_string()),
            Just("{".to_string()),
            Just("#x\n".to_string()),
            Just("\"s\"".to_string()),
        ]
    }

    proptest! {
        // Rejection is total: random token soup either parses into a RuleSet
        // that satisfies the invariants or yields a positioned error; never a
        // panic, never a partial structure.
        #[test]
        fn parse_total_on_token_soup(toks in proptest::collection::vec(arb_token(), 0..24)) {
            let src: String = toks.concat();
            match parse_rules(&src) {
                Ok(rs) => {
                    for r in &rs.rules {
                        prop_assert!(validate_bindings(r).is_empty());
                        prop_assert!(r.rule_prob > 0.0 && r.rule_prob <= 1.0);
                        let total: f64 = r.rule_prob
                            + r.alt_heads.iter().map(|a| a.prob).sum::<f64>();
                        prop_assert!(total <= 1.0 + 1e-9);
                    }
                    // accepted input round-trips
                    let printed = ruleset_to_string(&rs);
                    let rs2 = parse_rules(&printed);
                    prop_assert!(rs2.is_ok());
                    prop_assert_eq!(ruleset_to_string(&rs2.unwrap()), printed);
                }
                Err(_) => {}
            }
        }
    }
}
