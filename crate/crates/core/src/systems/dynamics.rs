use super::{Result, StateVector, SystemError, SystemKind, SystemSpec};

/// Time derivative of the packed state `y` (coordinates then rates).
fn derivative(spec: &SystemSpec, y: &[f64], dy: &mut [f64]) {
    let g = spec.gravity;
    match spec.system {
        SystemKind::CircularMotion => {
            dy[0] = y[1];
            dy[1] = 0.0;
        }
        SystemKind::SinglePendulum => {
            dy[0] = y[1];
            dy[1] = -(g / spec.length1) * y[0].sin();
        }
        SystemKind::RigidDoublePendulum => {
            let (m1, m2, l1, l2) = (spec.mass1, spec.m2(), spec.length1, spec.l2());
            let (t1, t2, w1, w2) = (y[0], y[1], y[2], y[3]);
            let d = t1 - t2;
            let den = 2.0 * m1 + m2 - m2 * (2.0 * d).cos();
            let a1 = (-g * (2.0 * m1 + m2) * t1.sin()
                - m2 * g * (t1 - 2.0 * t2).sin()
                - 2.0 * d.sin() * m2 * (w2 * w2 * l2 + w1 * w1 * l1 * d.cos()))
                / (l1 * den);
            let a2 = 2.0
                * d.sin()
                * (w1 * w1 * l1 * (m1 + m2)
                    + g * (m1 + m2) * t1.cos()
                    + w2 * w2 * l2 * m2 * d.cos())
                / (l2 * den);
            dy[0] = w1;
            dy[1] = w2;
            dy[2] = a1;
            dy[3] = a2;
        }
        SystemKind::ElasticDoublePendulum => {
            let (m1, m2, l1, l2, k) = (spec.mass1, spec.m2(), spec.length1, spec.l2(), spec.k());
            let (t1, t2, z, w1, w2, zd) = (y[0], y[1], y[2], y[3], y[4], y[5]);
            let r = l2 + z;
            let c = (t1 - t2).cos();
            let s = (t2 - t1).sin();
            let m = [
                [(m1 + m2) * l1 * l1, m2 * l1 * r * c, m2 * l1 * s],
                [m2 * l1 * r * c, m2 * r * r, 0.0],
                [m2 * l1 * s, 0.0, m2],
            ];
            let f = [
                -(2.0 * m2 * l1 * zd * c * w2 - m2 * l1 * r * s * w2 * w2
                    + (m1 + m2) * g * l1 * t1.sin()),
                -(2.0 * m2 * r * zd * w2 + m2 * l1 * r * s * w1 * w1 + m2 * g * r * t2.sin()),
                m2 * l1 * c * w1 * w1 + m2 * r * w2 * w2 + m2 * g * t2.cos() - k * z,
            ];
            let acc = solve3(m, f);
            dy[0] = w1;
            dy[1] = w2;
            dy[2] = zd;
            dy[3] = acc[0];
            dy[4] = acc[1];
            dy[5] = acc[2];
        }
    }
}

/// Gaussian elimination with partial pivoting on a 3×3 system.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> [f64; 3] {
    for col in 0..3 {
        let p = (col..3)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, p);
        b.swap(col, p);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for c in col..3 {
                a[row][c] -= f * a[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let mut acc = b[row];
        for c in row + 1..3 {
            acc -= a[row][c] * x[c];
        }
        x[row] = acc / a[row][row];
    }
    x
}

fn rk4(spec: &SystemSpec, y: &[f64], h: f64) -> Result<Vec<f64>> {
    let n = y.len();
    let mut k = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut tmp = vec![0.0; n];
    let offsets = [0.0, 0.5, 0.5, 1.0];
    for stage in 0..4 {
        let (prev, rest) = k.split_at_mut(stage);
        if stage == 0 {
            tmp.copy_from_slice(y);
        } else {
            for i in 0..n {
                tmp[i] = y[i] + offsets[stage] * h * prev[stage - 1][i];
            }
        }
        derivative(spec, &tmp, &mut rest[0]);
        if rest[0].iter().any(|v| !v.is_finite()) {
            return Err(SystemError::NonFinite { stage: stage + 1 });
        }
    }
    let out: Vec<f64> = (0..n)
        .map(|i| y[i] + h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]))
        .collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(SystemError::NonFinite { stage: 4 });
    }
    Ok(out)
}

fn step_by(spec: &SystemSpec, s: &StateVector, h: f64) -> Result<StateVector> {
    spec.check_state(s)?;
    if !s.is_finite() {
        return Err(SystemError::NonFinite { stage: 0 });
    }
    if spec.system == SystemKind::CircularMotion {
        // uniform rotation has a closed form
        return Ok(StateVector(vec![s.0[0] + s.0[1] * h, s.0[1]]));
    }
    rk4(spec, &s.0, h).map(StateVector)
}

/// Advances by one integration step `spec.sim_dt`.
pub fn step_dynamics(spec: &SystemSpec, s: &StateVector) -> Result<StateVector> {
    step_by(spec, s, spec.sim_dt)
}

/// Returns `n_steps + 1` states starting with `s0`, spaced by `spec.sim_dt`.
pub fn simulate(spec: &SystemSpec, s0: &StateVector, n_steps: usize) -> Result<Vec<StateVector>> {
    if n_steps == 0 {
        return Err(SystemError::InvalidSpec("n_steps must be >= 1".into()));
    }
    let mut out = Vec::with_capacity(n_steps + 1);
    out.push(s0.clone());
    for step in 0..n_steps {
        let next = step_dynamics(spec, &out[step]).map_err(|e| SystemError::AtStep {
            step,
            source: Box::new(e),
        })?;
        out.push(next);
    }
    Ok(out)
}

/// Advances by `duration` using `ceil(duration / sim_dt)` equal sub-steps, so
/// the effective step never exceeds `sim_dt`.
pub fn advance(spec: &SystemSpec, s: &StateVector, duration: f64) -> Result<StateVector> {
    let n = ((duration / spec.sim_dt) - 1e-9).ceil().max(1.0) as usize;
    let h = duration / n as f64;
    let mut cur = s.clone();
    for step in 0..n {
        cur = step_by(spec, &cur, h).map_err(|e| SystemError::AtStep {
            step,
            source: Box::new(e),
        })?;
    }
    Ok(cur)
}

/// `n_frames` states spaced by the observation interval `obs_dt`.
pub fn observe(
    spec: &SystemSpec,
    s0: &StateVector,
    n_frames: usize,
    obs_dt: f64,
) -> Result<Vec<StateVector>> {
    let mut out = Vec::with_capacity(n_frames);
    if n_frames == 0 {
        return Ok(out);
    }
    out.push(s0.clone());
    while out.len() < n_frames {
        let next = advance(spec, out.last().unwrap(), obs_dt)?;
        out.push(next);
    }
    Ok(out)
}
