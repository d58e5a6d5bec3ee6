//! Small U-Net: residual blocks with a shared conditioning embedding,
//! stride-2 convolutions down, nearest-neighbour upsampling, and skip
//! connections concatenated on the way up.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{build_condition_vector, CondMode, Condition, DenoiserError, EmbeddingForm, Objective};
use crate::autodiff::{AutodiffError, Graph, NamedTensor, Scalar, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    pub resolution: usize,
    pub base_channels: usize,
    pub channel_mults: Vec<usize>,
    pub res_blocks: usize,
    pub conditioning: CondMode,
    pub objective: Objective,
    pub embed_dim: usize,
    pub groups: usize,
    /// Condition on a fourth scalar, the shadow intensity.
    pub intensity: bool,
    pub embedding: EmbeddingForm,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            resolution: 64,
            base_channels: 32,
            channel_mults: vec![1, 2, 4],
            res_blocks: 2,
            conditioning: CondMode::Scalar,
            objective: Objective::RectifiedFlow,
            embed_dim: 256,
            groups: 8,
            intensity: false,
            embedding: EmbeddingForm::Standard,
        }
    }
}

impl DenoiserConfig {
    pub fn levels(&self) -> usize {
        self.channel_mults.len()
    }

    /// Noisy shadow, mask and object gray, plus the blob map when enabled.
    pub fn input_channels(&self) -> usize {
        3 + usize::from(self.conditioning.uses_blob())
    }

    pub fn emb_width(&self) -> usize {
        4 * self.base_channels
    }

    pub fn scalar_count(&self) -> usize {
        3 + usize::from(self.intensity)
    }

    pub fn validate(&self) -> Result<(), DenoiserError> {
        let bad = |m: String| Err(DenoiserError::Config(m));
        if self.channel_mults.is_empty() || self.channel_mults.contains(&0) {
            return bad("channel multipliers must be non-empty and positive".into());
        }
        if self.base_channels == 0 || self.res_blocks == 0 || self.groups == 0 {
            return bad("base channels, residual blocks and groups must be positive".into());
        }
        let div = 1usize << (self.levels() - 1);
        if self.resolution == 0 || self.resolution % div != 0 {
            return bad(format!(
                "resolution {} not divisible by {div}",
                self.resolution
            ));
        }
        if self.embed_dim == 0 || self.embed_dim % 2 == 1 {
            return Err(DenoiserError::OddEmbedding(self.embed_dim));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Lin {
    w: usize,
    b: usize,
}

#[derive(Clone, Copy, Debug)]
struct Conv {
    w: usize,
    b: usize,
}

#[derive(Clone, Copy, Debug)]
struct Norm {
    g: usize,
    b: usize,
    groups: usize,
}

#[derive(Clone, Copy, Debug)]
struct Res {
    n1: Norm,
    c1: Conv,
    emb: Lin,
    n2: Norm,
    c2: Conv,
    skip: Option<Conv>,
}

#[derive(Clone, Debug)]
struct Layout {
    t1: Lin,
    t2: Lin,
    cond: Option<Lin>,
    conv_in: Conv,
    down: Vec<Vec<Res>>,
    downsample: Vec<Conv>,
    mid: Res,
    up: Vec<Vec<Res>>,
    out_norm: Norm,
    out_conv: Conv,
}

#[derive(Clone, Copy)]
enum Init {
    Uniform(usize),
    Zero,
    One,
}

struct Builder {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    inits: Vec<Init>,
    groups: usize,
    emb: usize,
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl Builder {
    fn add(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.names.push(name);
        self.shapes.push(shape);
        self.inits.push(init);
        self.names.len() - 1
    }

    fn lin(&mut self, name: &str, i: usize, o: usize) -> Lin {
        Lin {
            w: self.add(format!("{name}.w"), vec![o, i], Init::Uniform(i)),
            b: self.add(format!("{name}.b"), vec![o], Init::Zero),
        }
    }

    fn conv(&mut self, name: &str, i: usize, o: usize, k: usize, zero: bool) -> Conv {
        let init = if zero {
            Init::Zero
        } else {
            Init::Uniform(i * k * k)
        };
        Conv {
            w: self.add(format!("{name}.w"), vec![o, i, k, k], init),
            b: self.add(format!("{name}.b"), vec![o], Init::Zero),
        }
    }

    fn norm(&mut self, name: &str, c: usize) -> Norm {
        Norm {
            g: self.add(format!("{name}.g"), vec![c], Init::One),
            b: self.add(format!("{name}.b"), vec![c], Init::Zero),
            groups: gcd(self.groups, c),
        }
    }

    fn res(&mut self, name: &str, i: usize, o: usize) -> Res {
        Res {
            n1: self.norm(&format!("{name}.n1"), i),
            c1: self.conv(&format!("{name}.c1"), i, o, 3, false),
            emb: self.lin(&format!("{name}.emb"), self.emb, o),
            n2: self.norm(&format!("{name}.n2"), o),
            c2: self.conv(&format!("{name}.c2"), o, o, 3, true),
            skip: (i != o).then(|| self.conv(&format!("{name}.skip"), i, o, 1, false)),
        }
    }
}

/// Network parameters plus the configuration that shaped them.
#[derive(Clone, Debug)]
pub struct UNet {
    config: DenoiserConfig,
    layout: Layout,
    names: Vec<String>,
    pub params: Vec<Tensor<f32>>,
}

impl UNet {
    /// Fresh weights: uniform `±1/√fan_in`, zero biases, unit norm gains,
    /// and zero output and second-conv weights so each block starts as its
    /// skip path and the network starts by predicting 0.
    pub fn new(config: DenoiserConfig, seed: u64) -> Result<Self, DenoiserError> {
        config.validate()?;
        let emb = config.emb_width();
        let mut b = Builder {
            names: Vec::new(),
            shapes: Vec::new(),
            inits: Vec::new(),
            groups: config.groups,
            emb,
        };
        let d = config.embed_dim;
        let t1 = b.lin("time.1", d, emb);
        let t2 = b.lin("time.2", emb, emb);
        let cond = config
            .conditioning
            .uses_scalars()
            .then(|| b.lin("cond", config.scalar_count() * d, emb));
        let ch: Vec<usize> = config
            .channel_mults
            .iter()
            .map(|m| m * config.base_channels)
            .collect();
        let conv_in = b.conv("in", config.input_channels(), ch[0], 3, false);
        let mut down = Vec::new();
        let mut downsample = Vec::new();
        let mut skips = Vec::new();
        let mut cur = ch[0];
        for (l, &c) in ch.iter().enumerate() {
            let mut blocks = Vec::new();
            for k in 0..config.res_blocks {
                blocks.push(b.res(&format!("down{l}.{k}"), cur, c));
                cur = c;
                skips.push(c);
            }
            down.push(blocks);
            if l + 1 < ch.len() {
                downsample.push(b.conv(&format!("down{l}.ds"), c, c, 3, false));
            }
        }
        let mid = b.res("mid", cur, cur);
        let mut up = Vec::new();
        for (l, &c) in ch.iter().enumerate().rev() {
            let mut blocks = Vec::new();
            for k in 0..config.res_blocks {
                let s = skips.pop().expect("one skip per down block");
                blocks.push(b.res(&format!("up{l}.{k}"), cur + s, c));
                cur = c;
            }
            up.push(blocks);
        }
        let out_norm = b.norm("out.n", cur);
        let out_conv = b.conv("out.c", cur, 1, 3, true);
        let layout = Layout {
            t1,
            t2,
            cond,
            conv_in,
            down,
            downsample,
            mid,
            up,
            out_norm,
            out_conv,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = b
            .shapes
            .iter()
            .zip(&b.inits)
            .map(|(shape, init)| {
                let n: usize = shape.iter().product();
                let data = match *init {
                    Init::Zero => vec![0.0; n],
                    Init::One => vec![1.0; n],
                    Init::Uniform(fan_in) => {
                        let bound = 1.0 / (fan_in as f32).sqrt();
                        (0..n).map(|_| rng.random_range(-bound..bound)).collect()
                    }
                };
                Tensor::new(shape, data)
            })
            .collect();
        Ok(UNet {
            config,
            layout,
            names: b.names,
            params,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn named_tensors(&self, prefix: &str) -> Vec<NamedTensor> {
        self.names
            .iter()
            .zip(&self.params)
            .map(|(n, t)| NamedTensor {
                name: format!("{prefix}{n}"),
                shape: t.shape.clone(),
                data: t.data.clone(),
            })
            .collect()
    }

    pub fn load_named(
        &mut self,
        prefix: &str,
        tensors: &[NamedTensor],
    ) -> Result<(), DenoiserError> {
        for (name, p) in self.names.iter().zip(&mut self.params) {
            let key = format!("{prefix}{name}");
            let t = tensors
                .iter()
                .find(|t| t.name == key)
                .ok_or_else(|| DenoiserError::Config(format!("checkpoint lacks {key}")))?;
            if t.shape != p.shape {
                return Err(DenoiserError::Config(format!(
                    "{key} has shape {:?}, expected {:?}",
                    t.shape, p.shape
                )));
            }
            p.data.clone_from(&t.data);
        }
        Ok(())
    }

    /// Places the parameters on a graph; `trainable` decides whether they
    /// collect gradients.
    pub fn bind<S: Scalar>(&self, g: &mut Graph<S>, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|t| {
                let t = Tensor::new(
                    &t.shape,
                    t.data
                        .iter()
                        .map(|&v| S::from_f32(v).expect("finite"))
                        .collect(),
                );
                if trainable {
                    g.param(t)
                } else {
                    g.input(t)
                }
            })
            .collect()
    }

    /// Builds the `[N, C_in, H, W]` input and the embedding features for a
    /// batch of noisy maps `x` (flattened, one `H·W` map per condition).
    pub fn inputs<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        x: &[f64],
        t: &[f64],
        conds: &[&Condition],
    ) -> Result<(Var, Var, Option<Var>), DenoiserError> {
        let c = &self.config;
        let n = conds.len();
        let hw = c.resolution * c.resolution;
        if x.len() != n * hw || t.len() != n {
            return Err(DenoiserError::Config(format!(
                "batch of {n} needs {} pixels and {n} times, got {} and {}",
                n * hw,
                x.len(),
                t.len()
            )));
        }
        let cin = c.input_channels();
        let cast = |v: f64| S::from_f64(v).expect("finite");
        let mut input = Vec::with_capacity(n * cin * hw);
        let mut tfeat = Vec::with_capacity(n * c.embed_dim);
        let mut cfeat = Vec::with_capacity(n * c.scalar_count() * c.embed_dim);
        for (i, cond) in conds.iter().enumerate() {
            if cond.width != c.resolution || cond.height != c.resolution {
                return Err(DenoiserError::Config(format!(
                    "condition is {}x{}, model expects {}x{}",
                    cond.width, cond.height, c.resolution, c.resolution
                )));
            }
            input.extend(x[i * hw..][..hw].iter().map(|&v| cast(v)));
            input.extend(cond.mask.iter().map(|&v| cast(v as f64)));
            input.extend(cond.gray.iter().map(|&v| cast(v as f64)));
            if c.conditioning.uses_blob() {
                input.extend(cond.blob().iter().map(|&v| cast(v as f64)));
            }
            let cv =
                build_condition_vector(&cond.params, t[i], c.embed_dim, c.intensity, c.embedding)?;
            tfeat.extend(cv.timestep.iter().map(|&v| cast(v)));
            cfeat.extend(cv.scalars.iter().map(|&v| cast(v)));
        }
        let xv = g.input(Tensor::new(&[n, cin, c.resolution, c.resolution], input));
        let tv = g.input(Tensor::new(&[n, c.embed_dim], tfeat));
        let cv = c
            .conditioning
            .uses_scalars()
            .then(|| g.input(Tensor::new(&[n, c.scalar_count() * c.embed_dim], cfeat)));
        Ok((xv, tv, cv))
    }

    /// Network output `[N, 1, H, W]`.
    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        p: &[Var],
        x: Var,
        t_feat: Var,
        c_feat: Option<Var>,
    ) -> Result<Var, AutodiffError> {
        let l = &self.layout;
        let lin = |g: &mut Graph<S>, x: Var, q: Lin| g.linear(x, p[q.w], Some(p[q.b]));
        let mut emb = lin(g, t_feat, l.t1)?;
        emb = g.silu(emb);
        emb = lin(g, emb, l.t2)?;
        if let (Some(q), Some(c)) = (l.cond, c_feat) {
            let ce = lin(g, c, q)?;
            emb = g.add(emb, ce)?;
        }
        let emb = g.silu(emb);

        let mut h = g.conv2d(x, p[l.conv_in.w], Some(p[l.conv_in.b]), 1, 1)?;
        let mut skips = Vec::new();
        for (lvl, blocks) in l.down.iter().enumerate() {
            for r in blocks {
                h = res_block(g, p, h, emb, r)?;
                skips.push(h);
            }
            if let Some(ds) = l.downsample.get(lvl) {
                h = g.conv2d(h, p[ds.w], Some(p[ds.b]), 2, 1)?;
            }
        }
        h = res_block(g, p, h, emb, &l.mid)?;
        let levels = l.up.len();
        for (k, blocks) in l.up.iter().enumerate() {
            for r in blocks {
                let s = skips.pop().expect("matching skip");
                h = g.concat(h, s)?;
                h = res_block(g, p, h, emb, r)?;
            }
            if k + 1 < levels {
                h = g.upsample2x(h)?;
            }
        }
        h = g.group_norm(h, p[l.out_norm.g], p[l.out_norm.b], l.out_norm.groups)?;
        h = g.silu(h);
        g.conv2d(h, p[l.out_conv.w], Some(p[l.out_conv.b]), 1, 1)
    }

    /// Inference on a batch, returned as `f64`.
    pub fn predict(
        &self,
        x: &[f64],
        t: &[f64],
        conds: &[&Condition],
    ) -> Result<Vec<f64>, DenoiserError> {
        let mut g = Graph::<f32>::new();
        let p = self.bind(&mut g, false);
        let (xv, tv, cv) = self.inputs(&mut g, x, t, conds)?;
        let out = self.forward(&mut g, &p, xv, tv, cv)?;
        Ok(g.value(out).iter().map(|&v| v as f64).collect())
    }
}

fn res_block<S: Scalar>(
    g: &mut Graph<S>,
    p: &[Var],
    x: Var,
    emb: Var,
    r: &Res,
) -> Result<Var, AutodiffError> {
    let mut h = g.group_norm(x, p[r.n1.g], p[r.n1.b], r.n1.groups)?;
    h = g.silu(h);
    h = g.conv2d(h, p[r.c1.w], Some(p[r.c1.b]), 1, 1)?;
    let e = g.linear(emb, p[r.emb.w], Some(p[r.emb.b]))?;
    h = g.add_channels(h, e)?;
    h = g.group_norm(h, p[r.n2.g], p[r.n2.b], r.n2.groups)?;
    h = g.silu(h);
    h = g.conv2d(h, p[r.c2.w], Some(p[r.c2.b]), 1, 1)?;
    let skip = match r.skip {
        Some(s) => g.conv2d(x, p[s.w], Some(p[s.b]), 1, 0)?,
        None => x,
    };
    g.add(h, skip)
}
