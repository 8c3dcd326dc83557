//! Assembled network: configuration, construction, forward pass and
//! accounting.

pub mod check;
pub mod checkpoint;
pub mod summary;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::blocks::decoder::DecoderSpec;
use crate::blocks::{bind, Builder, BnUpdate, Cascade, Ctx, Decoder, Encoder, External, ParamStore};
use crate::data::EXTERNAL_WIDTH;
use crate::error::{Error, Result};
use crate::par;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

pub use checkpoint::{load, save, Checkpoint};
pub use summary::{LayerRow, ModelSummary};

/// Which optional subgraphs are present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Flags {
    pub long_skip: bool,
    pub attention: bool,
    pub external: bool,
}

impl Default for Flags {
    fn default() -> Self {
        Flags {
            long_skip: true,
            attention: true,
            external: true,
        }
    }
}

/// The ablation variants: closeness 3 or 5, or one subgraph removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Base,
    N3,
    N5,
    NoLSC,
    NoAtt,
    NoExt,
}

impl Variant {
    pub const ABLATIONS: [Variant; 5] = [Variant::N3, Variant::N5, Variant::NoLSC, Variant::NoAtt, Variant::NoExt];

    pub fn apply(self, base: &ModelConfig) -> ModelConfig {
        let mut c = base.clone();
        match self {
            Variant::Base => {}
            Variant::N3 => c.closeness = 3,
            Variant::N5 => c.closeness = 5,
            Variant::NoLSC => c.flags.long_skip = false,
            Variant::NoAtt => c.flags.attention = false,
            Variant::NoExt => c.flags.external = false,
        }
        c
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Variant::Base, Variant::N3, Variant::N5, Variant::NoLSC, Variant::NoAtt, Variant::NoExt]
            .into_iter()
            .find(|v| format!("{:?}", v).eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown variant {:?} (Base, N3, N5, NoLSC, NoAtt, NoExt)", s)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Closeness length p (frames preceding the prediction instant).
    pub closeness: usize,
    /// Encoder/decoder depth L.
    pub depth: usize,
    /// Grid (N, M).
    pub grid: [usize; 2],
    pub base_filters: usize,
    /// Channels of the latent frames (C').
    pub bottleneck_channels: usize,
    pub kernel: usize,
    /// Reduction ratio of the channel-attention bottleneck.
    pub attention_ratio: usize,
    /// Width of each external sub-factor embedding.
    pub embed_width: usize,
    pub flags: Flags,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::bike_nyc()
    }
}

impl ModelConfig {
    /// 16x8 grid, hourly, two encoder levels.
    pub fn bike_nyc() -> Self {
        ModelConfig {
            closeness: 4,
            depth: 2,
            grid: [16, 8],
            base_filters: 64,
            bottleneck_channels: 16,
            kernel: 3,
            attention_ratio: 4,
            embed_width: 18,
            flags: Flags::default(),
            seed: 0,
        }
    }

    /// 32x32 grid, half-hourly, three encoder levels.
    pub fn taxi_bj() -> Self {
        ModelConfig {
            depth: 3,
            grid: [32, 32],
            ..Self::bike_nyc()
        }
    }

    /// 8x4 grid, closeness 3, one level: small enough for finite differences.
    pub fn tiny() -> Self {
        ModelConfig {
            closeness: 3,
            depth: 1,
            grid: [8, 4],
            ..Self::bike_nyc()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let [n, m] = self.grid;
        if self.closeness < 2 {
            return bad(format!("closeness must be >= 2, got {}", self.closeness));
        }
        if n == 0 || m == 0 {
            return bad(format!("grid {}x{} is empty", n, m));
        }
        let f = 1usize.checked_shl(self.depth as u32).filter(|&f| f <= n.max(m));
        match f {
            Some(f) if n % f == 0 && m % f == 0 => {}
            _ => {
                return bad(format!(
                    "grid {}x{} is not divisible by 2^{} (depth {}); both sides must halve exactly at every level",
                    n, m, self.depth, self.depth
                ))
            }
        }
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return bad(format!("kernel must be odd, got {}", self.kernel));
        }
        if self.base_filters == 0 || self.bottleneck_channels == 0 || self.embed_width == 0 {
            return bad("filter counts and embedding width must be positive".into());
        }
        if self.attention_ratio == 0
            || !self.bottleneck_channels.is_multiple_of(self.attention_ratio)
            || self.bottleneck_channels / self.attention_ratio == 0
        {
            return bad(format!(
                "attention ratio {} must divide bottleneck channels {}",
                self.attention_ratio, self.bottleneck_channels
            ));
        }
        Ok(())
    }

    /// Latent grid (N / 2^L, M / 2^L).
    pub fn latent_grid(&self) -> (usize, usize) {
        (self.grid[0] >> self.depth, self.grid[1] >> self.depth)
    }

    /// Hex SHA-256 of the architecture-defining fields (seed excluded).
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.seed = 0;
        let json = serde_json::to_string(&c).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{:02x}", b)).collect()
    }
}

/// Layer graph plus parameters (stored in 32-bit; cast for 64-bit checks).
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore<f32>,
    encoder: Encoder,
    cascade: Cascade,
    external: Option<External>,
    decoder: Decoder,
}

/// Result of one forward pass on a tape.
pub struct Forward<T> {
    pub output: Var,
    pub encoded: Var,
    pub bn_updates: Vec<BnUpdate<T>>,
}

impl Model {
    pub fn build(config: &ModelConfig) -> Result<Model> {
        config.validate()?;
        let c = config;
        let mut store = ParamStore::default();
        let mut b = Builder::new(&mut store, Rng::new(c.seed));
        let encoder = Encoder::new(&mut b, c.depth, c.base_filters, c.bottleneck_channels, c.kernel);
        let cascade = Cascade::new(&mut b, c.closeness, c.bottleneck_channels, c.kernel);
        let (n, m) = c.latent_grid();
        let external = c
            .flags
            .external
            .then(|| External::new(&mut b, c.embed_width, (n, m, c.bottleneck_channels)));
        let decoder = Decoder::new(
            &mut b,
            &DecoderSpec {
                depth: c.depth,
                filters: c.base_filters,
                bottleneck: c.bottleneck_channels,
                kernel: c.kernel,
                grid: (c.grid[0], c.grid[1]),
                attention_ratio: c.attention_ratio,
                attention: c.flags.attention,
                long_skip: c.flags.long_skip,
            },
        );
        Ok(Model {
            config: config.clone(),
            store,
            encoder,
            cascade,
            external,
            decoder,
        })
    }

    pub fn num_params(&self) -> usize {
        self.store.num_trainable()
    }

    fn check_inputs(&self, x: &[usize], e: Option<&[usize]>) -> Result<()> {
        let c = &self.config;
        let want = [c.closeness, c.grid[0], c.grid[1], 2];
        if x.len() != 5 || x[1..] != want {
            return Err(Error::shape(
                "model",
                format!("input must be [batch, {}, {}, {}, 2], got {:?}", want[0], want[1], want[2], x),
            ));
        }
        if let Some(e) = e {
            if self.external.is_some() && e != [x[0], EXTERNAL_WIDTH] {
                return Err(Error::shape(
                    "model",
                    format!("external input must be [{}, {}], got {:?}", x[0], EXTERNAL_WIDTH, e),
                ));
            }
        }
        Ok(())
    }

    /// Encoder, cascade, external fusion and decoder on `x: [b, p, n, m, 2]`
    /// and `e: [b, 14]`. `e` is ignored when the external branch is disabled.
    pub fn forward_ctx<T: Scalar>(&self, cx: &mut Ctx<T>, x: Var, e: Var) -> Result<(Var, Var)> {
        let es = cx.tape.shape(e).to_vec();
        self.check_inputs(cx.tape.shape(x), Some(&es))?;
        let enc = self.encoder.forward(cx, x)?;
        let skips = if self.config.flags.long_skip {
            cx.scope("encoder", |cx| enc.skips(cx))?
        } else {
            Vec::new()
        };
        let mut z = self.cascade.forward(cx, enc.output)?;
        if let Some(ext) = &self.external {
            let xe = ext.forward(cx, e)?;
            z = cx.scope("fusion", |cx| cx.tape.add(z, xe))?;
        }
        let y = self.decoder.forward(cx, z, &skips)?;
        Ok((y, enc.output))
    }

    /// Runs a forward pass on `tape` with parameters from `store` (which must
    /// come from this model, possibly cast).
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        vars: &[Var],
        x: Var,
        e: Var,
        train: bool,
    ) -> Result<Forward<T>> {
        let mut cx = Ctx::new(tape, vars, store, train);
        let (output, encoded) = self.forward_ctx(&mut cx, x, e)?;
        Ok(Forward {
            output,
            encoded,
            bn_updates: cx.bn_updates,
        })
    }

    /// Eval-mode prediction, `[b, n, m, 2]` in normalized units. Work is split
    /// into fixed chunks of samples, so results do not depend on the thread
    /// count.
    pub fn predict(&self, x: &Tensor<f32>, e: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.check_inputs(x.shape(), Some(e.shape()))?;
        const CHUNK: usize = 8;
        let b = x.shape()[0];
        let per_x = x.numel() / b;
        let per_e = e.numel() / e.shape()[0];
        let chunks: Vec<(usize, usize)> = (0..b).step_by(CHUNK).map(|s| (s, (s + CHUNK).min(b))).collect();
        let outs = par::map_slice(&chunks, |&(s, t)| -> Result<Vec<f32>> {
            let mut xs = x.shape().to_vec();
            xs[0] = t - s;
            let xt = Tensor::new(xs, x.data()[s * per_x..t * per_x].to_vec())?;
            let et = Tensor::new([t - s, per_e], e.data()[s * per_e..t * per_e].to_vec())?;
            let mut tape = Tape::new();
            let vars = bind(&mut tape, &self.store, false);
            let xv = tape.constant(xt);
            let ev = tape.constant(et);
            let f = self.forward(&mut tape, &self.store, &vars, xv, ev, false)?;
            Ok(tape.value(f.output).data().to_vec())
        });
        let mut data = Vec::with_capacity(b * per_x / self.config.closeness);
        for o in outs {
            data.extend(o?);
        }
        let [n, m] = self.config.grid;
        Tensor::new([b, n, m, 2], data)
    }

    /// Shape of the encoder output for a batch of `batch` samples.
    pub fn encoded_shape(&self, batch: usize) -> Result<Vec<usize>> {
        let (tape, f) = self.trace(batch, false)?;
        Ok(tape.shape(f.encoded).to_vec())
    }

    /// One eval-mode pass on zero inputs, for accounting and shape checks.
    pub fn trace(&self, batch: usize, train: bool) -> Result<(Tape<f32>, Forward<f32>)> {
        let c = &self.config;
        let mut tape = Tape::new();
        let vars = bind(&mut tape, &self.store, false);
        let x = tape.constant(Tensor::zeros([batch, c.closeness, c.grid[0], c.grid[1], 2]));
        let e = tape.constant(Tensor::zeros([batch, EXTERNAL_WIDTH]));
        let f = self.forward(&mut tape, &self.store, &vars, x, e, train)?;
        Ok((tape, f))
    }

    pub fn summary(&self) -> Result<ModelSummary> {
        let (tape, _) = self.trace(1, false)?;
        Ok(ModelSummary::from_trace(&tape.scope_report(), &self.store))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ModelConfig::bike_nyc().validate().unwrap();
        ModelConfig::taxi_bj().validate().unwrap();
        let mut c = ModelConfig::bike_nyc();
        c.depth = 3;
        c.validate().unwrap();
        c.depth = 4;
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("2^4"), "{err}");
        c = ModelConfig::bike_nyc();
        c.grid = [15, 8];
        assert!(c.validate().is_err());
        c = ModelConfig::bike_nyc();
        c.closeness = 1;
        assert!(c.validate().is_err());
        c = ModelConfig::bike_nyc();
        c.attention_ratio = 3;
        assert!(c.validate().is_err());
    }

    #[test]
    fn digest_ignores_seed_only() {
        let a = ModelConfig::bike_nyc();
        let mut b = a.clone();
        b.seed = 9;
        assert_eq!(a.digest(), b.digest());
        b.flags.attention = false;
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
    }
}
