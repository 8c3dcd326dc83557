use super::layers::{Builder, Conv, Ctx};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Var;

/// Multiplicative unit: three sigmoid gates and a tanh candidate, all
/// convolutions of the input frame.
#[derive(Debug, Clone)]
pub struct Mu {
    name: String,
    pub g1: Conv,
    pub g2: Conv,
    pub g3: Conv,
    pub u: Conv,
}

impl Mu {
    pub fn new<T: Scalar>(b: &mut Builder<T>, name: &str, channels: usize, kernel: usize) -> Self {
        b.scope(name, |b| Mu {
            name: name.to_string(),
            g1: Conv::new(b, "g1", channels, channels, kernel, 1),
            g2: Conv::new(b, "g2", channels, channels, kernel, 1),
            g3: Conv::new(b, "g3", channels, channels, kernel, 1),
            u: Conv::new(b, "u", channels, channels, kernel, 1),
        })
    }

    /// `g1 * tanh(g2 * h + g3 * u)`.
    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<T>, h: Var) -> Result<Var> {
        cx.scope(&self.name, |cx| {
            let a1 = self.g1.forward(cx, h)?;
            let g1 = cx.tape.sigmoid(a1);
            let a2 = self.g2.forward(cx, h)?;
            let g2 = cx.tape.sigmoid(a2);
            let a3 = self.g3.forward(cx, h)?;
            let g3 = cx.tape.sigmoid(a3);
            let au = self.u.forward(cx, h)?;
            let u = cx.tape.tanh(au);
            let gh = cx.tape.mul(g2, h)?;
            let gu = cx.tape.mul(g3, u)?;
            let s = cx.tape.add(gh, gu)?;
            let s = cx.tape.tanh(s);
            cx.tape.mul(g1, s)
        })
    }
}

/// Merges an (older, recent) frame pair into one frame.
#[derive(Debug, Clone)]
pub struct Cmu {
    name: String,
    pub older: Mu,
    pub recent: Mu,
    pub wo: Conv,
    pub wh: Conv,
}

impl Cmu {
    pub fn new<T: Scalar>(b: &mut Builder<T>, name: &str, channels: usize, kernel: usize) -> Self {
        b.scope(name, |b| Cmu {
            name: name.to_string(),
            older: Mu::new(b, "mu_older", channels, kernel),
            recent: Mu::new(b, "mu_recent", channels, kernel),
            wo: Conv::new(b, "out_gate", channels, channels, kernel, 1),
            wh: Conv::new(b, "out_cand", channels, channels, kernel, 1),
        })
    }

    /// The older frame passes the same MU twice, the recent frame once.
    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<T>, older: Var, recent: Var) -> Result<Var> {
        cx.scope(&self.name, |cx| {
            let h1 = self.older.forward(cx, older)?;
            let h1 = self.older.forward(cx, h1)?;
            let h2 = self.recent.forward(cx, recent)?;
            let h = cx.tape.add(h1, h2)?;
            let o = self.wo.forward(cx, h)?;
            let o = cx.tape.sigmoid(o);
            let c = self.wh.forward(cx, h)?;
            let c = cx.tape.tanh(c);
            cx.tape.mul(o, c)
        })
    }
}

/// Binary reduction of a frame sequence: each level maps length q to q-1 by
/// applying one CMU (shared across the level) to every adjacent pair.
#[derive(Debug, Clone)]
pub struct Cascade {
    pub levels: Vec<Cmu>,
}

impl Cascade {
    pub fn new<T: Scalar>(b: &mut Builder<T>, frames: usize, channels: usize, kernel: usize) -> Self {
        b.scope("cascade", |b| Cascade {
            levels: (1..frames)
                .map(|l| Cmu::new(b, &format!("level{}", l), channels, kernel))
                .collect(),
        })
    }

    /// Number of CMU applications for a sequence of `frames`.
    pub fn applications(frames: usize) -> usize {
        frames * (frames - 1) / 2
    }

    /// `x: [b, t, n, m, c]` -> `[b, n, m, c]`.
    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<T>, x: Var) -> Result<Var> {
        let shape = cx.tape.shape(x).to_vec();
        let [b, t, n, m, c] = shape[..] else {
            return Err(Error::shape("cascade", format!("expected [b, t, n, m, c], got {:?}", shape)));
        };
        if t < 2 {
            return Err(Error::shape("cascade", format!("need at least 2 frames, got {}", t)));
        }
        if t != self.levels.len() + 1 {
            return Err(Error::shape(
                "cascade",
                format!("built for {} frames, got {}", self.levels.len() + 1, t),
            ));
        }
        cx.scope("cascade", |cx| {
            let mut seq = x;
            for (k, cmu) in self.levels.iter().enumerate() {
                let q = t - k;
                let older = cx.tape.narrow(seq, 1, 0, q - 1)?;
                let recent = cx.tape.narrow(seq, 1, 1, q - 1)?;
                let older = cx.tape.reshape(older, &[b * (q - 1), n, m, c])?;
                let recent = cx.tape.reshape(recent, &[b * (q - 1), n, m, c])?;
                let y = cmu.forward(cx, older, recent)?;
                seq = cx.tape.reshape(y, &[b, q - 1, n, m, c])?;
            }
            cx.tape.reshape(seq, &[b, n, m, c])
        })
    }
}
