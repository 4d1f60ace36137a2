//! Constant-velocity Kalman smoothing for track output.
//!
//! The box state `(x, y, w, h, vx, vy, vw, vh)` factors into four independent
//! position/velocity pairs, so the smoother runs four scalar constant-velocity
//! filters (forward pass plus Rauch-Tung-Striebel backward pass). Frames
//! without a measurement are pure predictions, which is how gaps inside a
//! track get interpolated.

use crate::scalar::Real;

/// 2x2 symmetric matrix helpers, row-major `[a, b; c, d]` as `[[a,b],[c,d]]`.
type Mat2<T> = [[T; 2]; 2];
type Vec2<T> = [T; 2];

fn mat_mul<T: Real>(a: &Mat2<T>, b: &Mat2<T>) -> Mat2<T> {
    [
        [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
        [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
    ]
}

fn mat_add<T: Real>(a: &Mat2<T>, b: &Mat2<T>) -> Mat2<T> {
    [[a[0][0] + b[0][0], a[0][1] + b[0][1]], [a[1][0] + b[1][0], a[1][1] + b[1][1]]]
}

fn mat_transpose<T: Real>(a: &Mat2<T>) -> Mat2<T> {
    [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
}

fn mat_vec<T: Real>(a: &Mat2<T>, v: &Vec2<T>) -> Vec2<T> {
    [a[0][0] * v[0] + a[0][1] * v[1], a[1][0] * v[0] + a[1][1] * v[1]]
}

fn mat_inv<T: Real>(a: &Mat2<T>) -> Mat2<T> {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]]
}

/// Smooths one scalar series over the closed frame range of its samples.
///
/// `samples` are `(frame, value)` pairs, strictly increasing in frame and
/// non-empty. Returns one value per frame from the first to the last sampled
/// frame inclusive; unsampled frames are interpolated by the smoother.
pub fn smooth_series<T: Real>(samples: &[(usize, T)], meas_std: T, process_std: T) -> Vec<T> {
    assert!(!samples.is_empty(), "smoother needs at least one sample");
    debug_assert!(samples.windows(2).all(|w| w[0].0 < w[1].0), "samples must ascend in frame");
    let first = samples[0].0;
    let last = samples[samples.len() - 1].0;
    let n = last - first + 1;
    let r = meas_std * meas_std;
    let q = process_std * process_std;
    // Discrete white-noise acceleration over a unit frame step.
    let qm: Mat2<T> = [
        [q * T::of(0.25), q * T::of(0.5)],
        [q * T::of(0.5), q],
    ];
    let f: Mat2<T> = [[T::one(), T::one()], [T::zero(), T::one()]];
    let ft = mat_transpose(&f);

    let mut meas = vec![None; n];
    for &(frame, z) in samples {
        meas[frame - first] = Some(z);
    }

    // Forward pass. The initial state pins the position to the first sample
    // and leaves the velocity vague, so early data dominates the slope.
    let big = T::of(1e6) * (r + T::one());
    let mut x: Vec2<T> = [samples[0].1, T::zero()];
    let mut p: Mat2<T> = [[r, T::zero()], [T::zero(), big]];

    let mut x_pred = vec![[T::zero(); 2]; n];
    let mut p_pred = vec![[[T::zero(); 2]; 2]; n];
    let mut x_post = vec![[T::zero(); 2]; n];
    let mut p_post = vec![[[T::zero(); 2]; 2]; n];

    for k in 0..n {
        let (xp, pp) = if k == 0 {
            (x, p)
        } else {
            (mat_vec(&f, &x), mat_add(&mat_mul(&mat_mul(&f, &p), &ft), &qm))
        };
        x_pred[k] = xp;
        p_pred[k] = pp;
        match meas[k] {
            Some(z) => {
                let s = pp[0][0] + r;
                let kx = pp[0][0] / s;
                let kv = pp[1][0] / s;
                let innov = z - xp[0];
                x = [xp[0] + kx * innov, xp[1] + kv * innov];
                // Joseph form keeps the covariance symmetric positive.
                let ikh: Mat2<T> = [[T::one() - kx, T::zero()], [-kv, T::one()]];
                let mut pn = mat_mul(&mat_mul(&ikh, &pp), &mat_transpose(&ikh));
                pn[0][0] += kx * kx * r;
                pn[0][1] += kx * kv * r;
                pn[1][0] += kv * kx * r;
                pn[1][1] += kv * kv * r;
                p = pn;
            }
            None => {
                x = xp;
                p = pp;
            }
        }
        x_post[k] = x;
        p_post[k] = p;
    }

    // RTS backward pass.
    let mut x_s = x_post.clone();
    for k in (0..n - 1).rev() {
        let c = mat_mul(&mat_mul(&p_post[k], &ft), &mat_inv(&p_pred[k + 1]));
        let dx = [x_s[k + 1][0] - x_pred[k + 1][0], x_s[k + 1][1] - x_pred[k + 1][1]];
        let corr = mat_vec(&c, &dx);
        x_s[k] = [x_post[k][0] + corr[0], x_post[k][1] + corr[1]];
    }

    x_s.into_iter().map(|s| s[0]).collect()
}
