use nalgebra::{DMatrix, DVector};
use std::time::Instant;

fn main() {
    let n = 420;
    // build an RBF-ish SPD matrix
    let pts: Vec<[f64; 5]> = (0..n)
        .map(|i| {
            let mut s = i as u64 * 2654435761 + 1;
            let mut p = [0.0; 5];
            for v in p.iter_mut() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                *v = (s >> 11) as f64 / (1u64 << 53) as f64;
            }
            p
        })
        .collect();
    let t0 = Instant::now();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut d2 = 0.0;
            for d in 0..5 {
                let diff = pts[i][d] - pts[j][d];
                d2 += diff * diff / 0.09;
            }
            let v = (-0.5 * d2).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] += 1e-2;
    }
    let t_build = t0.elapsed();

    let t1 = Instant::now();
    let mut chol = None;
    for _ in 0..5 {
        chol = nalgebra::Cholesky::new(k.clone());
    }
    let t_chol = t1.elapsed() / 5;
    let chol = chol.unwrap();

    let t2 = Instant::now();
    let mut inv = None;
    for _ in 0..5 {
        inv = Some(chol.inverse());
    }
    let t_inv = t2.elapsed() / 5;
    let inv = inv.unwrap();

    let y = DVector::from_fn(n, |i, _| (i % 2) as f64);
    let t3 = Instant::now();
    let mut alpha = DVector::zeros(n);
    for _ in 0..20 {
        alpha = chol.solve(&y);
    }
    let t_solve = t3.elapsed() / 20;

    // mean predict cost: k* build + dot
    let t4 = Instant::now();
    let mut acc = 0.0;
    let q = [0.3, 0.4, 0.5, 0.6, 0.7];
    for rep in 0..10000 {
        let mut m = 0.0;
        for i in 0..n {
            let mut d2 = 0.0;
            for d in 0..5 {
                let diff = pts[i][d] - q[d] - (rep as f64) * 1e-9;
                d2 += diff * diff / 0.09;
            }
            m += alpha[i] * (-0.5 * d2).exp();
        }
        acc += m;
    }
    let t_pred = t4.elapsed() / 10000;
    println!(
        "build {:?}  chol {:?}  inv {:?}  solve {:?}  predict {:?}  (acc {} inv00 {})",
        t_build, t_chol, t_inv, t_solve, t_pred, acc, inv[(0, 0)]
    );
}
