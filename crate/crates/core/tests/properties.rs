use proptest::prelude::*;

use skipwalk::contfrac::{compute_tails, monotonicity_index};
use skipwalk::dseries::{d_partial, DTable};
use skipwalk::exact::{p_abc, q1_abc, q2_abc};
use skipwalk::{ChainParams, PerturbationSpec};

fn family() -> impl Strategy<Value = PerturbationSpec> {
    prop_oneof![
        (0.3f64..3.0).prop_map(|b| PerturbationSpec::theorem2(b).unwrap()),
        (0.05f64..0.5, 0.3f64..0.95).prop_map(|(c, a)| PerturbationSpec::power_law(c, a).unwrap()),
    ]
}

fn horner(tails: &skipwalk::contfrac::TailTable, m: u64, n: u64) -> f64 {
    (m + 1..n).rev().fold(1.0, |acc, i| 1.0 + tails.u(i) * acc)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn zero_family_is_the_fixed_point(lo in 1u64..1_000_000_000, len in 1u64..500) {
        let t = compute_tails(&ChainParams::new(PerturbationSpec::zero()), lo, lo + len, 1e-15).unwrap();
        for n in lo..=lo + len {
            prop_assert!((t.u(n) - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn tails_do_not_depend_on_the_window(spec in family(), lo in 1u64..5000, len in 10u64..400, extra in 1u64..200) {
        let chain = ChainParams::new(spec);
        let a = compute_tails(&chain, lo, lo + len, 1e-15).unwrap();
        let b = compute_tails(&chain, lo, lo + len + extra + 20, 1e-15).unwrap();
        for n in lo..=lo + len {
            prop_assert!((a.u(n) - b.u(n)).abs() <= 1e-13, "n = {n}: {} vs {}", a.u(n), b.u(n));
        }
    }

    #[test]
    fn tails_satisfy_the_recursion(spec in family(), lo in 1u64..5000, len in 2u64..300) {
        let chain = ChainParams::new(spec);
        let t = compute_tails(&chain, lo, lo + len, 1e-15).unwrap();
        for n in lo..lo + len {
            // f^(n) = a_{n+1} / (1 + f^(n+1))
            let rhs = chain.a(n + 1).unwrap() / (1.0 + t.f(n + 1));
            prop_assert!((t.f(n) - rhs).abs() <= 1e-12 * rhs);
        }
    }

    #[test]
    fn forward_sum_matches_horner(spec in family(), m in 1u64..3000, len in 1u64..2000) {
        let t = compute_tails(&ChainParams::new(spec), 1, m + len + 2, 1e-15).unwrap();
        let f = d_partial(&t, m, m + len).unwrap();
        let h = horner(&t, m, m + len);
        prop_assert!((f - h).abs() <= 1e-12 * h, "{f} vs {h}");
    }

    #[test]
    fn skip_splitting_adds_up(spec in family(), a in 1u64..300, gap in 1u64..100, width in 1u64..300) {
        let chain = ChainParams::new(spec);
        let (b, c) = (a + gap, a + gap + width);
        let p = p_abc(&chain, a, b, c).unwrap();
        let q1 = q1_abc(&chain, a, b, c).unwrap();
        let q2 = q2_abc(&chain, a, b, c).unwrap();
        let slack = 1e-12 + 4.0 * (p.residual + q1.residual + q2.residual);
        prop_assert!((p.value + q1.value + q2.value - 1.0).abs() <= slack);
    }

    #[test]
    fn raising_one_p_helps_escape(
        r in proptest::collection::vec(0.0f64..0.3, 60),
        a in 1u64..20,
        bump in 0.01f64..0.2,
        at in 0usize..60,
    ) {
        let c = 55;
        prop_assume!(at as u64 + 1 > a);
        let base = ChainParams::new(PerturbationSpec::table(r.clone()).unwrap());
        let mut raised = r;
        raised[at] += bump;
        let raised = ChainParams::new(PerturbationSpec::table(raised).unwrap());
        let e0 = 1.0 - p_abc(&base, a, a + 1, c).unwrap().value;
        let e1 = 1.0 - p_abc(&raised, a, a + 1, c).unwrap().value;
        prop_assert!(e1 >= e0 - 1e-12, "{e1} < {e0}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn d_increases_and_ratio_decreases(beta in 0.4f64..3.0, n in 300u64..1500) {
        let chain = ChainParams::new(PerturbationSpec::theorem2(beta).unwrap());
        let t = compute_tails(&chain, 1, 1 << 17, 1e-15).unwrap();
        let n0 = monotonicity_index(&t).unwrap().n0;
        let dt = DTable::build(t, 1, 1600, 1e-9, 1 << 17).unwrap();
        for m in n0.max(1)..1600 {
            prop_assert!(dt.d(m).unwrap() <= dt.d(m + 1).unwrap() * (1.0 + 1e-9));
        }
        let tails = dt.tails();
        let ratio = |m: u64| d_partial(tails, m, n).unwrap() / dt.d(m).unwrap();
        for m in (1..n - 8).step_by(7) {
            prop_assert!(ratio(m + 7) <= ratio(m) * (1.0 + 1e-9), "m = {m}");
        }
    }
}
