use super::layers::{Builder, Ctx, Dense};
use crate::data::external::SUB_FACTORS;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Var;

/// Embeds each calendar/weather sub-factor separately, then projects the
/// concatenated embeddings onto the latent grid.
#[derive(Debug, Clone)]
pub struct External {
    embeds: Vec<Dense>,
    project: Dense,
    grid: (usize, usize, usize),
}

impl External {
    pub fn new<T: Scalar>(b: &mut Builder<T>, width: usize, grid: (usize, usize, usize)) -> Self {
        b.scope("external", |b| External {
            embeds: SUB_FACTORS
                .iter()
                .map(|&(name, len)| Dense::new(b, name, len, width))
                .collect(),
            project: Dense::new(b, "project", width * SUB_FACTORS.len(), grid.0 * grid.1 * grid.2),
            grid,
        })
    }

    /// `e: [b, 14]` -> `[b, n, m, c]`.
    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<T>, e: Var) -> Result<Var> {
        let width: usize = SUB_FACTORS.iter().map(|f| f.1).sum();
        let batch = match *cx.tape.shape(e) {
            [b, w] if w == width => b,
            ref s => {
                return Err(Error::shape(
                    "external",
                    format!("expected [batch, {}], got {:?}", width, s),
                ))
            }
        };
        cx.scope("external", |cx| {
            let mut parts = Vec::new();
            let mut start = 0;
            for ((name, len), dense) in SUB_FACTORS.iter().zip(&self.embeds) {
                let slice = cx.tape.narrow(e, 1, start, *len)?;
                let y = dense.forward(cx, slice)?;
                parts.push(cx.scope(name, |cx| Ok(cx.tape.relu(y)))?);
                start += len;
            }
            let joined = cx.tape.concat(&parts, 1)?;
            let y = self.project.forward(cx, joined)?;
            let (n, m, c) = self.grid;
            cx.tape.reshape(y, &[batch, n, m, c])
        })
    }
}
