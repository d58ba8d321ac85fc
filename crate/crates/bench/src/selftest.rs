//! Fast in-process sanity checks for `bench selftest`.

use sketchogd::linalg::{gaussian_matrix, DEFAULT_RANK_TOL};
use sketchogd::metric_bounds::{
    bound_method1, matrix_with_spectrum, reconstruction_error, sketch_columns, verify_bound_montecarlo, Spectrum,
};
use sketchogd::model::{LabeledExample, MlpModel};
use sketchogd::sketch::{SketchMethod, SketchState};

use crate::idx::{encode_idx, parse_idx_pair};

fn streaming_matches_batch() -> bool {
    let g = gaussian_matrix(30, 12, 1).expect("shape");
    let Ok(state) = sketch_columns(&g, SketchMethod::Method1, 5, 7, 3) else { return false };
    let rows = gaussian_matrix(12, 5, SketchState::omega_stream_seed(3)).expect("shape");
    let batch = g.matmul(&rows).expect("shape");
    state.y().sub(&batch).expect("shape").frobenius_norm() <= 1e-10 * batch.frobenius_norm()
}

fn exact_recovery() -> bool {
    let g = gaussian_matrix(40, 3, 2).expect("shape").matmul(&gaussian_matrix(3, 20, 3).expect("shape")).expect("shape");
    SketchMethod::ALL.iter().all(|&m| {
        sketch_columns(&g, m, 6, 8, 4)
            .and_then(|s| Ok(s.extract_basis(DEFAULT_RANK_TOL)?))
            .ok()
            .and_then(|b| reconstruction_error(&g, &b).ok())
            .is_some_and(|e| e < 1e-8 * g.frobenius_norm_sq())
    })
}

fn flat_bound() -> bool {
    let eig = Spectrum::Flat { lambda: 1.0 }.eigenvalues(60);
    bound_method1(&eig, 10).is_ok_and(|b| b == (60.0, 0))
        && matrix_with_spectrum(&eig, 60, 1)
            .and_then(|g| verify_bound_montecarlo(&g, SketchMethod::Method1, 10, 12, 30, 5))
            .is_ok_and(|r| r.within_bound())
}

fn gradient_check() -> bool {
    let Ok(m) = MlpModel::init(&[3, 5, 2], 7) else { return false };
    let ex = LabeledExample::new(vec![0.4, -0.3, 0.8], 1);
    let Ok(g) = m.correct_logit_gradient(&ex) else { return false };
    (0..m.p()).all(|i| {
        let h = 1e-5;
        let mut a = m.clone();
        a.weights_mut()[i] += h;
        let mut b = m.clone();
        b.weights_mut()[i] -= h;
        let fd = (a.forward(&ex.x).expect("dims")[1] - b.forward(&ex.x).expect("dims")[1]) / (2.0 * h);
        (fd - g[i]).abs() <= 1e-4 * fd.abs().max(g[i].abs()).max(1e-3)
    })
}

fn idx_round_trip() -> bool {
    let (img, lab) = encode_idx(2, 2, &[vec![0, 51, 102, 255]], &[9]);
    parse_idx_pair(&img, &lab).is_ok_and(|(_, _, ex)| ex[0].x == vec![0.0, 0.2, 0.4, 1.0] && ex[0].y == 9)
}

pub fn selftest() -> Vec<(&'static str, bool)> {
    vec![
        ("streaming sketch equals batch product", streaming_matches_batch()),
        ("low-rank input recovered exactly", exact_recovery()),
        ("flat spectrum bound and Monte Carlo check", flat_bound()),
        ("logit gradient matches finite differences", gradient_check()),
        ("IDX round trip", idx_round_trip()),
    ]
}
