use proptest::prelude::*;

use svmsim_lang::ast::{Expr, ExprKind, StmtKind};
use svmsim_lang::print::{expr_str, program_str};
use svmsim_lang::prune::prune;
use svmsim_lang::{Checked, Decision, PrefetchWindow};

#[derive(Debug, Clone)]
enum Tree {
    Int(i64),
    Var(&'static str),
    Neg(Box<Tree>),
    Bin(&'static str, Box<Tree>, Box<Tree>),
}

fn tree() -> impl Strategy<Value = Tree> {
    let leaf = prop_oneof![(0i64..1000).prop_map(Tree::Int), prop::sample::select(vec!["a", "b", "c"]).prop_map(Tree::Var)];
    leaf.prop_recursive(5, 40, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(|t| Tree::Neg(Box::new(t))),
            (
                prop::sample::select(vec!["+", "-", "*", "/", "%", "<", "<=", ">", ">=", "==", "!="]),
                inner.clone(),
                inner
            )
                .prop_map(|(op, l, r)| Tree::Bin(op, Box::new(l), Box::new(r))),
        ]
    })
}

fn full_parens(t: &Tree) -> String {
    match t {
        Tree::Int(v) => v.to_string(),
        Tree::Var(v) => v.to_string(),
        Tree::Neg(a) => format!("(-{})", full_parens(a)),
        Tree::Bin(op, l, r) => format!("({} {op} {})", full_parens(l), full_parens(r)),
    }
}

fn tree_shape(t: &Tree) -> String {
    match t {
        Tree::Int(v) => v.to_string(),
        Tree::Var(v) => v.to_string(),
        Tree::Neg(a) => format!("(neg {})", tree_shape(a)),
        Tree::Bin(op, l, r) => format!("({op} {} {})", tree_shape(l), tree_shape(r)),
    }
}

fn expr_shape(e: &Expr) -> String {
    match &e.kind {
        ExprKind::Int(v) => v.to_string(),
        ExprKind::Var(v) => v.clone(),
        ExprKind::Unary(_, a) => format!("(neg {})", expr_shape(a)),
        ExprKind::Binary(op, l, r) => format!("({} {} {})", op.symbol(), expr_shape(l), expr_shape(r)),
        other => panic!("unexpected {other:?}"),
    }
}

fn init_of(src: &str) -> Expr {
    let c = Checked::parse(src).unwrap();
    match &c.program.kernel.body.stmts[0].kind {
        StmtKind::Decl { init: Some(e), .. } => e.clone(),
        other => panic!("unexpected {other:?}"),
    }
}

fn wrap(e: &str) -> String {
    format!("kernel k(int a, int b, int c) {{\n    int x = {e};\n}}\n")
}

proptest! {
    #[test]
    fn printing_preserves_expression_structure(t in tree()) {
        let parsed = init_of(&wrap(&full_parens(&t)));
        prop_assert_eq!(expr_shape(&parsed), tree_shape(&t));
        let minimal = expr_str(&parsed);
        let again = init_of(&wrap(&minimal));
        prop_assert_eq!(expr_shape(&again), tree_shape(&t));
        prop_assert_eq!(expr_str(&again), minimal);
    }

    #[test]
    fn printed_programs_are_fixed_points(t in tree(), u in tree()) {
        let src = format!(
            "kernel k(int a, int b, int c) {{\n    int x = {};\n    if ({} < x) {{\n        x = {};\n    }}\n}}\n",
            full_parens(&t), full_parens(&u), full_parens(&u)
        );
        let once = program_str(&Checked::parse(&src).unwrap().program);
        let twice = program_str(&Checked::parse(&once).unwrap().program);
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn window_never_prefetches_twice_or_outside_bounds(
        min in 0u64..8,
        extra in 0u64..8,
        start in 0u64..40,
        steps in prop::collection::vec(0u64..4, 1..60),
    ) {
        let win = PrefetchWindow::new(min, min + extra);
        let (mut w, mut p) = (0u64, start);
        let mut last: Option<u64> = None;
        for step in steps {
            w += step;
            let before = p;
            match win.decide(w, &mut p) {
                Decision::Prefetch(at) => {
                    prop_assert!(at >= w + min && at <= w + min + extra);
                    prop_assert!(last.is_none_or(|l| at > l));
                    prop_assert_eq!(p, at + 1);
                    last = Some(at);
                }
                Decision::Skip => {
                    prop_assert!(before > w + min + extra);
                    prop_assert_eq!(p, before);
                }
            }
        }
    }

    /// Two prefetches of one struct array: whenever the pruner drops the
    /// second, its pages must lie within the first's for every base the
    /// allocator may hand out and every iteration.
    #[test]
    fn pruned_prefetches_are_covered(
        words_log in 0u32..11,
        odd in any::<bool>(),
        (a, b) in (0i64..4, 0i64..4),
        (x, y) in (0i64..64, 0i64..64),
        (l1, l2) in (1i64..4096, 1i64..4096),
    ) {
        let words = if odd { 3 << words_log.min(8) } else { 1i64 << words_log };
        let size = 4 * words;
        let x = x % words;
        let y = y % words;
        let src = format!(
            "struct s {{ int f[{words}]; }}\n\
             kernel k(s svm* r, int n) {{\n    window_for (i in 0 .. n) {{\n        \
             prefetch(&r[i + {a}].f[{x}], {l1});\n        prefetch(&r[i + {b}].f[{y}], {l2});\n    }}\n}}\n"
        );
        let c = Checked::parse(&src).unwrap();
        let pruned = prune(&c.program, &c.sema);
        let kept = match &pruned.kernel.body.stmts[0].kind {
            StmtKind::For { body, .. } => body.stmts.len(),
            other => panic!("unexpected {other:?}"),
        };
        if a == b && x == y && l1 >= l2 {
            prop_assert_eq!(kept, 1);
        }
        if kept == 1 {
            let align = if size.count_ones() == 1 && size <= 4096 { size } else { 4 };
            let pages = |addr: i64, len: i64| (addr / 4096, (addr + len - 1) / 4096);
            for k in 0..(3 * 4096 / align).min(64) {
                let base = 0x1000_0000 + k * align;
                for i in 0..16 {
                    let p1 = pages(base + (i + a) * size + 4 * x, l1);
                    let p2 = pages(base + (i + b) * size + 4 * y, l2);
                    prop_assert!(p2.0 >= p1.0 && p2.1 <= p1.1, "{src} base {base:#x} i {i}");
                }
            }
        }
    }
}
