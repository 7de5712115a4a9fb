use engage::stats::{anova_single_factor, f_survival, reg_inc_beta};
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

fn groups() -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 2..9), 2..6)
}

proptest! {
    #[test]
    fn p_decreases_as_f_grows(d1 in 1u32..12, d2 in 1u32..40, a in 0.0f64..30.0, b in 0.0f64..30.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (d1, d2) = (f64::from(d1), f64::from(d2));
        prop_assert!(f_survival(lo, d1, d2) >= f_survival(hi, d1, d2) - 1e-15);
    }

    #[test]
    fn survival_matches_reference(d1 in 1u32..20, d2 in 1u32..60, f in 0.01f64..50.0) {
        let want = FisherSnedecor::new(f64::from(d1), f64::from(d2)).unwrap().sf(f);
        prop_assert!((f_survival(f, f64::from(d1), f64::from(d2)) - want).abs() < 1e-10);
    }

    #[test]
    fn beta_symmetry(x in 0.001f64..0.999, a in 0.5f64..30.0, b in 0.5f64..30.0) {
        prop_assert!((reg_inc_beta(x, a, b) + reg_inc_beta(1.0 - x, b, a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn result_is_a_probability(g in groups()) {
        let r = anova_single_factor(&g).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.p));
        prop_assert!(r.f >= 0.0);
        prop_assert_eq!(r.df_between as usize, g.len() - 1);
    }

    #[test]
    fn shifting_every_sample_changes_nothing(g in groups(), shift in -100.0f64..100.0) {
        let moved: Vec<Vec<f64>> = g.iter().map(|v| v.iter().map(|x| x + shift).collect()).collect();
        let a = anova_single_factor(&g).unwrap();
        let b = anova_single_factor(&moved).unwrap();
        if a.degenerate.is_none() && b.degenerate.is_none() {
            prop_assert!((a.f - b.f).abs() <= 1e-6 * a.f.max(1.0));
        }
    }

    #[test]
    fn group_order_does_not_matter(mut g in groups()) {
        let a = anova_single_factor(&g).unwrap();
        g.reverse();
        let b = anova_single_factor(&g).unwrap();
        prop_assert!((a.f - b.f).abs() <= 1e-9 * a.f.max(1.0));
        prop_assert!((a.p - b.p).abs() <= 1e-12);
    }
}

#[test]
fn two_group_f_is_t_squared() {
    let a = [4.1, 5.3, 6.0, 4.8, 5.5];
    let b = [6.2, 7.1, 5.9, 7.4, 6.8, 6.1];
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let var = |v: &[f64]| {
        let m = mean(v);
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    };
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let pooled = ((na - 1.0) * var(&a) + (nb - 1.0) * var(&b)) / (na + nb - 2.0);
    let t = (mean(&a) - mean(&b)) / (pooled * (1.0 / na + 1.0 / nb)).sqrt();
    let r = anova_single_factor(&[a.to_vec(), b.to_vec()]).unwrap();
    assert!((r.f - t * t).abs() < 1e-10);
}
