use num_complex::Complex64;
use proptest::prelude::*;
use ratebal_core::lattice::{encode_block, mod_cell, CELL_HALF};
use ratebal_core::{lq_decompose, CMatrix};

fn matrix() -> impl Strategy<Value = CMatrix> {
    (1usize..=16)
        .prop_flat_map(|m| (1usize..=m, Just(m)))
        .prop_flat_map(|(n, m)| {
            prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), n * m)
                .prop_map(move |v| CMatrix::from_fn(n, m, |i, j| Complex64::new(v[i * m + j].0, v[i * m + j].1)))
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn reconstructs_and_is_unitary(h in matrix()) {
        let st = lq_decompose(&h).unwrap();
        let scale = h.frobenius_norm().max(1.0);
        prop_assert!(st.l.mul(&st.q).sub(&h).frobenius_norm() / scale < 1e-10);
        let m = h.cols();
        prop_assert!(st.q.mul(&st.q.conj_transpose()).sub(&CMatrix::identity(m)).frobenius_norm() < 1e-10);
        for i in 0..h.rows() {
            prop_assert!(st.l[(i, i)].im == 0.0 && st.l[(i, i)].re >= 0.0);
            for j in i + 1..m {
                prop_assert!(st.l[(i, j)].norm() == 0.0);
            }
        }
    }

    #[test]
    fn duplicated_row_is_degenerate(h in matrix()) {
        prop_assume!(h.rows() < h.cols());
        let mut rows: Vec<Vec<Complex64>> = (0..h.rows()).map(|i| h.row(i).to_vec()).collect();
        rows.push(rows[0].iter().map(|z| z * 2.0).collect());
        let d = CMatrix::from_rows(&rows);
        let st = lq_decompose(&d).unwrap();
        let last = d.rows() - 1;
        prop_assert!(st.degenerate.contains(&last));
        prop_assert!(st.l.mul(&st.q).sub(&d).frobenius_norm() / d.frobenius_norm() < 1e-10);
    }

    #[test]
    fn precoded_symbols_stay_in_cell(h in matrix(), seed in any::<u64>()) {
        let st = lq_decompose(&h).unwrap();
        let n = h.rows();
        let mut x = seed;
        let mut next = || {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((x >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 2.0 * CELL_HALF
        };
        let v: Vec<Complex64> = (0..n).map(|_| Complex64::new(next(), next())).collect();
        let u: Vec<Complex64> = (0..n).map(|_| Complex64::new(next(), next())).collect();
        let a = vec![Complex64::new(0.3, -0.1); n];
        let enc = encode_block(&v, &st, &a, &u, 100.0);
        for s in &enc.s {
            prop_assert!(s.re >= -CELL_HALF && s.re < CELL_HALF && s.im >= -CELL_HALF && s.im < CELL_HALF);
        }
        // ‖x‖ = ‖s‖ because the rows of Q are orthonormal.
        let ns: f64 = enc.s.iter().map(|z| z.norm_sqr()).sum();
        let nx: f64 = enc.x.iter().map(|z| z.norm_sqr()).sum();
        prop_assert!((ns - nx).abs() < 1e-9 * ns.max(1.0));
        let d = mod_cell(enc.s[0] + u[0] - v[0]);
        prop_assert!(d.norm() < 1e-9 || (d.re.abs() - CELL_HALF).abs() < 1e-9 || (d.im.abs() - CELL_HALF).abs() < 1e-9);
    }
}
