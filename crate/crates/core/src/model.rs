//! The trainable model: VAE plus forward and backward velocity fields, and its
//! JSON checkpoint format.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{BoundField, Direction, FieldNet, TimeEmbedding};
use crate::tensor::{ParamContainer, ParamStore, Tape, Tensor, FORMAT_VERSION};
use crate::vae::{Vae, VaeShape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub latent: usize,
    pub vae_hidden: usize,
    pub field_hidden: usize,
    pub time_dim: usize,
    pub leaky_slope: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            latent: 50,
            vae_hidden: 256,
            field_hidden: 256,
            time_dim: 64,
            leaky_slope: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub genes: Vec<String>,
    pub config: ModelConfig,
    pub t_min: f64,
    pub t_max: f64,
}

#[derive(Clone, Debug)]
pub struct ModelBundle {
    pub meta: ModelMeta,
    pub vae: Vae,
    pub forward: FieldNet,
    pub backward: FieldNet,
    pub params: ParamStore,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    model: ModelMeta,
    params: ParamContainer,
}

impl ModelBundle {
    fn assemble(meta: ModelMeta, params: ParamStore) -> Result<Self> {
        let c = &meta.config;
        if c.latent == 0 || c.vae_hidden == 0 || c.field_hidden == 0 || meta.genes.is_empty() {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if c.time_dim < 2 || c.time_dim % 2 != 0 {
            return Err(Error::Config(format!("time_dim must be even and ≥ 2, got {}", c.time_dim)));
        }
        let vae = Vae::new(VaeShape {
            genes: meta.genes.len(),
            latent: c.latent,
            hidden: c.vae_hidden,
            leaky_slope: c.leaky_slope,
        });
        let emb = TimeEmbedding::new(c.time_dim, meta.t_min, meta.t_max);
        let forward = FieldNet::new(Direction::Forward, c.latent, c.field_hidden, emb.clone());
        let backward = FieldNet::new(Direction::Backward, c.latent, c.field_hidden, emb);
        Ok(ModelBundle {
            meta,
            vae,
            forward,
            backward,
            params,
        })
    }

    /// Fresh model for `genes` with time normalization over `[t_min, t_max]`.
    pub fn init(genes: Vec<String>, config: ModelConfig, t_min: f64, t_max: f64, rng: &mut impl Rng) -> Result<Self> {
        let meta = ModelMeta {
            genes,
            config,
            t_min,
            t_max,
        };
        let mut m = Self::assemble(meta, ParamStore::new())?;
        m.vae.init(&mut m.params, rng);
        m.forward.init(&mut m.params, rng);
        m.backward.init(&mut m.params, rng);
        Ok(m)
    }

    pub fn genes(&self) -> usize {
        self.meta.genes.len()
    }

    pub fn latent(&self) -> usize {
        self.meta.config.latent
    }

    pub fn forward_field(&self) -> BoundField<'_> {
        self.forward.bind(&self.params)
    }

    pub fn backward_field(&self) -> BoundField<'_> {
        self.backward.bind(&self.params)
    }

    /// Encodes on plain values; with `noise` the reparameterized sample, otherwise the mean.
    pub fn encode(&self, x: &Tensor, noise: Option<&Tensor>) -> Result<Tensor> {
        let tape = Tape::new();
        let xv = tape.constant(x.clone());
        Ok(self.vae.encode(&tape, &self.params, xv, noise)?.z.value())
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let zv = tape.constant(z.clone());
        Ok(self.vae.decode(&tape, &self.params, zv)?.value())
    }

    pub fn to_json(&self) -> Result<String> {
        let ck = Checkpoint {
            format_version: FORMAT_VERSION,
            model: self.meta.clone(),
            params: self.params.to_container(),
        };
        Ok(serde_json::to_string(&ck)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(s).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if ck.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                ck.format_version
            )));
        }
        let params = ParamStore::from_container(ck.params)?;
        let mut fresh = Self::assemble(ck.model.clone(), ParamStore::new())?;
        // check names and shapes against a freshly initialized layout
        let mut layout = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        fresh.vae.init(&mut layout, &mut rng);
        fresh.forward.init(&mut layout, &mut rng);
        fresh.backward.init(&mut layout, &mut rng);
        for (name, t) in layout.iter() {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                Some(p) => {
                    return Err(Error::Checkpoint(format!(
                        "parameter `{name}` has shape {:?}, expected {:?}",
                        p.shape(),
                        t.shape()
                    )))
                }
                None => return Err(Error::Checkpoint(format!("missing parameter `{name}`"))),
            }
        }
        if params.len() != layout.len() {
            return Err(Error::Checkpoint("checkpoint has unexpected extra parameters".into()));
        }
        fresh.params = params;
        Ok(fresh)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}
