//! Encoder/decoder pair over a partitioned latent `(y, z)` with a shared
//! fixed variance, plus the parameter checkpoint format.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{Architecture, Bound, GaussianParams, ParamSet, Stack};

pub const CKPT_MAGIC: &str = "LARVAE-CKPT v1";

/// Rows per tape when encoding or decoding a whole dataset.
const EVAL_CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LatentPartition {
    /// Label part, one entry per ground-truth factor.
    pub dim_y: usize,
    /// Nuisance part.
    pub dim_z: usize,
}

impl LatentPartition {
    pub fn new(dim_y: usize, dim_z: usize) -> Result<Self> {
        if dim_y == 0 {
            return Err(Error::Invalid("dim_y must be >= 1".into()));
        }
        Ok(Self { dim_y, dim_z })
    }

    pub fn latent_dim(&self) -> usize {
        self.dim_y + self.dim_z
    }
}

/// Encoder outputs for one batch. `mu_z` is `None` when `dim_z == 0`.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    pub head: Var,
    pub mu_y: Var,
    pub mu_z: Option<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vae {
    pub arch: Architecture,
    pub image_shape: [usize; 3],
    pub partition: LatentPartition,
    pub sigma2: f64,
    pub encoder: Stack,
    pub decoder: Stack,
}

impl Vae {
    pub fn new(
        arch: Architecture,
        image_shape: [usize; 3],
        partition: LatentPartition,
        sigma2: f64,
    ) -> Result<Self> {
        if !(sigma2 > 0.0) {
            return Err(Error::domain(
                "vae",
                format!("sigma2 must be > 0, got {sigma2}"),
            ));
        }
        let encoder = arch.encoder(image_shape, partition.latent_dim());
        let decoder = arch.decoder(partition.latent_dim(), image_shape);
        let pixels: usize = image_shape.iter().product();
        let head = encoder.output_shape(&[pixels])?;
        let out = decoder.output_shape(&[partition.latent_dim()])?;
        if head != [partition.latent_dim()] || out != [pixels] {
            return Err(Error::Invalid(format!(
                "{} cannot map image {image_shape:?} to latent {}",
                arch.name(),
                partition.latent_dim()
            )));
        }
        Ok(Self {
            arch,
            image_shape,
            partition,
            sigma2,
            encoder,
            decoder,
        })
    }

    pub fn pixels(&self) -> usize {
        self.image_shape.iter().product()
    }

    pub fn latent_dim(&self) -> usize {
        self.partition.latent_dim()
    }

    pub fn init_params(&self, seed: u64) -> ParamSet {
        self.init_params_with(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn init_params_with(&self, rng: &mut impl Rng) -> ParamSet {
        let mut params = ParamSet::new();
        self.encoder.init_into(rng, &mut params);
        self.decoder.init_into(rng, &mut params);
        params
    }

    /// Rejects parameter sets whose names or shapes differ from this model's.
    pub fn check_params(&self, params: &ParamSet) -> Result<()> {
        let want = self.init_params(0);
        let names = |p: &ParamSet| {
            p.iter()
                .map(|(k, v)| (k.clone(), v.shape().to_vec()))
                .collect::<Vec<_>>()
        };
        let (a, b) = (names(&want), names(params));
        if a != b {
            let diff = a
                .iter()
                .find(|x| !b.contains(x))
                .or_else(|| b.iter().find(|x| !a.contains(x)))
                .map(|(n, s)| format!("{n} {s:?}"))
                .unwrap_or_default();
            return Err(Error::Invalid(format!(
                "parameters do not match model: {diff}"
            )));
        }
        Ok(())
    }

    /// Posterior means for a `[B, C*H*W]` batch.
    pub fn encode(&self, tape: &mut Tape, params: &Bound, x: Var) -> Result<Encoded> {
        let s = tape.shape(x);
        if s.len() != 2 || s[1] != self.pixels() {
            return Err(Error::shape("encode", s, &[0, self.pixels()]));
        }
        let head = self.encoder.forward(tape, params, x)?;
        let p = self.partition;
        let mu_y = tape.slice(head, 0, p.dim_y)?;
        let mu_z = if p.dim_z > 0 {
            Some(tape.slice(head, p.dim_y, p.latent_dim())?)
        } else {
            None
        };
        Ok(Encoded { head, mu_y, mu_z })
    }

    /// `mean + sqrt(sigma2) * eps` with gradient flowing into `mean`.
    pub fn reparameterize(&self, tape: &mut Tape, mean: Var, eps: Tensor) -> Result<Var> {
        if tape.shape(mean) != eps.shape() {
            return Err(Error::shape(
                "reparameterize",
                tape.shape(mean),
                eps.shape(),
            ));
        }
        let e = tape.constant(eps);
        let noise = tape.scale(e, self.sigma2.sqrt());
        tape.add(mean, noise)
    }

    /// Mean image `[B, C*H*W]` in [0, 1] for label part `y` and nuisance `z`.
    pub fn decode(&self, tape: &mut Tape, params: &Bound, y: Var, z: Option<Var>) -> Result<Var> {
        let p = self.partition;
        let ys = tape.shape(y).to_vec();
        if ys.len() != 2 || ys[1] != p.dim_y {
            return Err(Error::shape("decode", &ys, &[0, p.dim_y]));
        }
        let latent = match (z, p.dim_z) {
            (None, 0) => y,
            (Some(z), dz) if dz > 0 => {
                let zs = tape.shape(z);
                if zs.len() != 2 || zs[1] != dz || zs[0] != ys[0] {
                    return Err(Error::shape("decode", zs, &[ys[0], dz]));
                }
                tape.concat(&[y, z])?
            }
            (z, dz) => {
                let got = z.map(|z| tape.shape(z).to_vec()).unwrap_or_default();
                return Err(Error::shape("decode", &got, &[ys[0], dz]));
            }
        };
        self.decoder.forward(tape, params, latent)
    }

    /// Encoder means `[N, dim_y + dim_z]` for every row of `images`.
    pub fn encode_means(&self, params: &ParamSet, images: &Tensor) -> Result<Tensor> {
        self.map_rows(params, images, self.latent_dim(), |vae, tape, bound, x| {
            Ok(vae.encode(tape, bound, x)?.head)
        })
    }

    /// Decoded mean images `[N, C*H*W]` for every row of `latents`.
    pub fn decode_latents(&self, params: &ParamSet, latents: &Tensor) -> Result<Tensor> {
        let dy = self.partition.dim_y;
        self.map_rows(params, latents, self.pixels(), |vae, tape, bound, l| {
            let y = tape.slice(l, 0, dy)?;
            let z = match vae.partition.dim_z {
                0 => None,
                _ => Some(tape.slice(l, dy, vae.latent_dim())?),
            };
            vae.decode(tape, bound, y, z)
        })
    }

    /// Posterior factors `q(y|x)` and `q(z|x)` of a single image.
    pub fn posterior(
        &self,
        params: &ParamSet,
        image: &[f64],
    ) -> Result<(GaussianParams, GaussianParams)> {
        let x = Tensor::new([1, image.len()], image.to_vec())?;
        let means = self.encode_means(params, &x)?.into_data();
        let (y, z) = means.split_at(self.partition.dim_y);
        Ok((
            GaussianParams::new(y.to_vec(), self.sigma2)?,
            GaussianParams::new(z.to_vec(), self.sigma2)?,
        ))
    }

    fn map_rows(
        &self,
        params: &ParamSet,
        input: &Tensor,
        out_width: usize,
        f: impl Fn(&Self, &mut Tape, &Bound, Var) -> Result<Var>,
    ) -> Result<Tensor> {
        let s = input.shape();
        if s.len() != 2 {
            return Err(Error::shape("map_rows", s, &[0, 0]));
        }
        let (n, w) = (s[0], s[1]);
        let mut out = Vec::with_capacity(n * out_width);
        for start in (0..n).step_by(EVAL_CHUNK) {
            let end = (start + EVAL_CHUNK).min(n);
            let rows = Tensor::new([end - start, w], input.data()[start * w..end * w].to_vec())?;
            let mut tape = Tape::new();
            let bound = params.bind_frozen(&mut tape);
            let x = tape.constant(rows);
            let r = f(self, &mut tape, &bound, x)?;
            out.extend_from_slice(tape.value(r).data());
        }
        Tensor::new([n, out_width], out)
    }

    /// Rebuilds the model that produced `params`; the architecture and
    /// nuisance width are read off the parameter shapes.
    pub fn from_params(
        params: &ParamSet,
        image_shape: [usize; 3],
        dim_y: usize,
        sigma2: f64,
    ) -> Result<Self> {
        let arch = if params.iter().any(|(_, t)| t.shape().len() == 4) {
            Architecture::Cnn
        } else {
            Architecture::Mlp
        };
        let head = params
            .iter()
            .filter(|(k, _)| k.starts_with("enc.") && k.ends_with(".bias"))
            .last()
            .map(|(_, t)| t.numel())
            .ok_or_else(|| Error::Invalid("no encoder parameters".into()))?;
        if head < dim_y {
            return Err(Error::Invalid(format!(
                "encoder head width {head} is smaller than dim_y {dim_y}"
            )));
        }
        let vae = Self::new(
            arch,
            image_shape,
            LatentPartition::new(dim_y, head - dim_y)?,
            sigma2,
        )?;
        vae.check_params(params)?;
        Ok(vae)
    }
}

/// `mean + sqrt(sigma2) * eps` on plain vectors; `sigma2 = 0` is allowed.
pub fn reparameterize(g: &GaussianParams, eps: &[f64]) -> Result<Vec<f64>> {
    if eps.len() != g.mean.len() {
        return Err(Error::shape(
            "reparameterize",
            &[g.mean.len()],
            &[eps.len()],
        ));
    }
    if g.sigma2 < 0.0 {
        return Err(Error::domain("reparameterize", "negative sigma2"));
    }
    let sd = g.sigma2.sqrt();
    Ok(g.mean.iter().zip(eps).map(|(m, e)| m + sd * e).collect())
}

// -------------------------------------------------------------------------
// checkpoints
// -------------------------------------------------------------------------

pub fn write_checkpoint(w: &mut impl Write, params: &ParamSet) -> Result<()> {
    let io = |e: std::io::Error| Error::Format {
        kind: "checkpoint",
        detail: e.to_string(),
    };
    writeln!(w, "{CKPT_MAGIC}").map_err(io)?;
    for (name, t) in params.iter() {
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::Invalid(format!("bad parameter name `{name}`")));
        }
        let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        writeln!(w, "{name}").map_err(io)?;
        writeln!(w, "{}", dims.join(" ")).map_err(io)?;
        for v in t.data() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl BufRead) -> Result<ParamSet> {
    let bad = |detail: String| Error::Format {
        kind: "checkpoint",
        detail,
    };
    let mut line = String::new();
    r.read_line(&mut line).map_err(|e| bad(e.to_string()))?;
    if line.trim_end() != CKPT_MAGIC {
        return Err(bad(format!("bad magic `{}`", line.trim_end())));
    }
    let mut params = ParamSet::new();
    let mut last: Option<String> = None;
    loop {
        line.clear();
        if r.read_line(&mut line).map_err(|e| bad(e.to_string()))? == 0 {
            break;
        }
        let name = line.trim_end().to_string();
        if last.as_ref().is_some_and(|l| *l >= name) {
            return Err(bad(format!("parameter `{name}` out of order")));
        }
        line.clear();
        r.read_line(&mut line).map_err(|e| bad(e.to_string()))?;
        let shape = line
            .split_whitespace()
            .map(|d| {
                d.parse::<usize>()
                    .map_err(|e| bad(format!("{name}: dim `{d}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut buf = vec![0u8; n * 8];
        r.read_exact(&mut buf)
            .map_err(|e| bad(format!("{name}: payload: {e}")))?;
        let data = buf
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        params.insert(name.clone(), Tensor::new(shape, data)?);
        last = Some(name);
    }
    Ok(params)
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &ParamSet) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_checkpoint(&mut w, params)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ParamSet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&mut BufReader::new(file))
}
