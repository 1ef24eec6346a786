//! Exact information quantities on small discrete instances with a finite set
//! of inputs `x`, labels `y` and noise levels `e`.

use rand::Rng;
use vpn_core::{Result, VpnError};

const NORMALISATION_TOL: f64 = 1e-9;

fn plogp(p: f64, q: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        p * q.ln()
    }
}

/// `p(x)` and `p(y, e | x)`, stored as `joint[x][y][e]`.
#[derive(Clone, Debug)]
pub struct JointTable {
    px: Vec<f64>,
    joint: Vec<Vec<Vec<f64>>>,
}

impl JointTable {
    pub fn new(px: Vec<f64>, joint: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if px.len() != joint.len() || px.is_empty() {
            return Err(VpnError::Contract("one conditional table per input".into()));
        }
        let total: f64 = px.iter().sum();
        if px.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > NORMALISATION_TOL {
            return Err(VpnError::Contract(format!("p(x) sums to {total}")));
        }
        let (ny, ne) = (joint[0].len(), joint[0].first().map_or(0, Vec::len));
        for (i, t) in joint.iter().enumerate() {
            if t.len() != ny || t.iter().any(|row| row.len() != ne) {
                return Err(VpnError::Contract("ragged joint table".into()));
            }
            let s: f64 = t.iter().flatten().sum();
            if t.iter().flatten().any(|&p| !(p >= 0.0)) || (s - 1.0).abs() > NORMALISATION_TOL {
                return Err(VpnError::Contract(format!("p(y, e | x_{i}) sums to {s}")));
            }
        }
        Ok(JointTable { px, joint })
    }

    /// Random instance with strictly positive entries.
    pub fn random<R: Rng>(rng: &mut R, nx: usize, ny: usize, ne: usize) -> Self {
        let px = normalised((0..nx).map(|_| rng.random_range(0.1..1.0)).collect());
        let joint = (0..nx)
            .map(|_| {
                // skewed weights so that y and e are usually dependent
                let flat = normalised(
                    (0..ny * ne).map(|_| rng.random_range(0.0f64..1.0).powi(3) + 1e-3).collect(),
                );
                flat.chunks(ne).map(<[f64]>::to_vec).collect()
            })
            .collect();
        JointTable::new(px, joint).expect("normalised by construction")
    }

    pub fn inputs(&self) -> usize {
        self.px.len()
    }

    pub fn labels(&self) -> usize {
        self.joint[0].len()
    }

    pub fn levels(&self) -> usize {
        self.joint[0][0].len()
    }

    fn p_y(&self, x: usize, y: usize) -> f64 {
        self.joint[x][y].iter().sum()
    }

    fn p_e(&self, x: usize, e: usize) -> f64 {
        self.joint[x].iter().map(|row| row[e]).sum()
    }

    /// `p(y | x, e)`.
    pub fn posterior(&self, x: usize, e: usize, y: usize) -> f64 {
        self.joint[x][y][e] / self.p_e(x, e)
    }

    /// `H(T) = -sum_x p(x) sum_y p(y|x) log p(y|x)`.
    pub fn task_entropy(&self) -> f64 {
        -(0..self.inputs())
            .map(|x| {
                self.px[x] * (0..self.labels()).map(|y| plogp(self.p_y(x, y), self.p_y(x, y))).sum::<f64>()
            })
            .sum::<f64>()
    }

    /// `H(T | E) = -sum p(x) p(y, e | x) log p(y | x, e)`.
    pub fn conditional_task_entropy(&self) -> f64 {
        let mut h = 0.0;
        for x in 0..self.inputs() {
            for y in 0..self.labels() {
                for e in 0..self.levels() {
                    h -= self.px[x] * plogp(self.joint[x][y][e], self.posterior(x, e, y));
                }
            }
        }
        h
    }

    /// `L = sum p(x) p(y, e | x) log q(y | x, e)` for `q[x][e][y]`.
    pub fn variational_objective(&self, q: &[Vec<Vec<f64>>]) -> Result<f64> {
        let mut l = 0.0;
        for x in 0..self.inputs() {
            for e in 0..self.levels() {
                let s: f64 = q[x][e].iter().sum();
                if (s - 1.0).abs() > NORMALISATION_TOL || q[x][e].iter().any(|&v| !(v > 0.0)) {
                    return Err(VpnError::Contract(format!("q(. | x_{x}, e_{e}) sums to {s}")));
                }
                for y in 0..self.labels() {
                    l += self.px[x] * plogp(self.joint[x][y][e], q[x][e][y]);
                }
            }
        }
        Ok(l)
    }

    /// A random strictly positive `q[x][e][y]`.
    pub fn random_q<R: Rng>(&self, rng: &mut R) -> Vec<Vec<Vec<f64>>> {
        (0..self.inputs())
            .map(|_| {
                (0..self.levels())
                    .map(|_| normalised((0..self.labels()).map(|_| rng.random_range(1e-3..1.0)).collect()))
                    .collect()
            })
            .collect()
    }

    /// The true posterior as a `q` table.
    pub fn posterior_q(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.inputs())
            .map(|x| {
                (0..self.levels())
                    .map(|e| (0..self.labels()).map(|y| self.posterior(x, e, y)).collect())
                    .collect()
            })
            .collect()
    }
}

/// `I(T, E) = sum p(x) p(y, e | x) log [p(y, e | x) / (p(y | x) p(e | x))]`.
pub fn mutual_information_exact(table: &JointTable) -> f64 {
    let mut i = 0.0;
    for x in 0..table.inputs() {
        for y in 0..table.labels() {
            for e in 0..table.levels() {
                let p = table.joint[x][y][e];
                if p > 0.0 {
                    i += table.px[x] * p * (p / (table.p_y(x, y) * table.p_e(x, e))).ln();
                }
            }
        }
    }
    i
}

fn normalised(mut v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|p| *p /= s);
    v
}
