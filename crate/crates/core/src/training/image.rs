//! Image transmitters: a one-shot autoencoder for the differentiable regime
//! and a pixel-increment policy for the reinforcement-learning regime.

use std::path::Path;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::autograd::{Mat, ParamStore, Segments, Tape, Var};
use crate::codec::Checkpoint;
use crate::corpus::ImageMessage;
use crate::nn::Linear;
use crate::rng;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImageCodecConfig {
    pub hidden: usize,
    /// Channel symbols per image.
    pub symbols: usize,
}

impl Default for ImageCodecConfig {
    fn default() -> Self {
        ImageCodecConfig {
            hidden: 64,
            symbols: 16,
        }
    }
}

impl ImageCodecConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.hidden < 1 {
            errs.push("image.hidden must be >= 1".to_string());
        }
        if self.symbols < 1 {
            errs.push("image.symbols must be >= 1".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// Stacks flattened images as rows.
pub fn images_to_mat(images: &[ImageMessage]) -> Result<Mat> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty image batch".into()))?;
    let p = first.len();
    if images.iter().any(|im| im.shape() != first.shape()) {
        return Err(Error::Shape("images in a batch must share a shape".into()));
    }
    let flat: Vec<f64> = images.iter().flat_map(|im| im.pixels().iter().copied()).collect();
    Ok(Mat::from_shape_vec((images.len(), p), flat).expect("sized"))
}

/// Transmitter half shared by both image models: pixels → hidden → unit-power symbols.
#[derive(Clone, Debug)]
struct PixelEncoder {
    l1: Linear,
    l2: Linear,
}

impl PixelEncoder {
    fn new(p: &mut ParamStore, pixels: usize, cfg: &ImageCodecConfig, rng: &mut rng::Rng) -> Self {
        PixelEncoder {
            l1: Linear::new(p, "enc.l1", pixels, cfg.hidden, true, rng),
            l2: Linear::new(p, "enc.l2", cfg.hidden, cfg.symbols, true, rng),
        }
    }

    fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let centred = t.offset(x, -0.5);
        let h = self.l1.forward(t, centred);
        let h = t.gelu(h);
        let s = self.l2.forward(t, h);
        let rows = t.shape(s).0;
        let segs = Rc::new(Segments::from_lengths(&vec![1; rows]));
        t.segment_normalize(s, &segs)
    }
}

#[derive(Clone, Debug)]
pub struct ImageCodec {
    cfg: ImageCodecConfig,
    shape: (usize, usize, usize),
    pub params: ParamStore,
    enc: PixelEncoder,
    d1: Linear,
    d2: Linear,
}

impl ImageCodec {
    pub fn new(cfg: &ImageCodecConfig, shape: (usize, usize, usize), seed: u64) -> Result<Self> {
        cfg.validate()?;
        let pixels = shape.0 * shape.1 * shape.2;
        let mut rng = rng::substream(seed, "init");
        let mut p = ParamStore::new();
        let enc = PixelEncoder::new(&mut p, pixels, cfg, &mut rng);
        let d1 = Linear::new(&mut p, "dec.l1", cfg.symbols, cfg.hidden, true, &mut rng);
        let d2 = Linear::new(&mut p, "dec.l2", cfg.hidden, pixels, true, &mut rng);
        Ok(ImageCodec {
            cfg: cfg.clone(),
            shape,
            params: p,
            enc,
            d1,
            d2,
        })
    }

    pub fn config(&self) -> &ImageCodecConfig {
        &self.cfg
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    /// `B × P` pixels → `B × S` unit-power symbols.
    pub fn encode(&self, t: &mut Tape, x: Var) -> Var {
        self.enc.forward(t, x)
    }

    /// `B × S` received symbols → `B × P` pixels in `(0, 1)`.
    pub fn decode(&self, t: &mut Tape, y: Var) -> Var {
        let h = self.d1.forward(t, y);
        let h = t.gelu(h);
        let o = self.d2.forward(t, h);
        t.sigmoid(o)
    }
}

/// Pixel-increment decoding policy conditioned on the received symbols and
/// the current image; each pixel picks `+δ` or `−δ` (optionally "keep").
#[derive(Clone, Debug)]
pub struct ImagePolicy {
    cfg: ImageCodecConfig,
    shape: (usize, usize, usize),
    actions: usize,
    pub params: ParamStore,
    enc: PixelEncoder,
    a1: Linear,
    a2: Linear,
}

impl ImagePolicy {
    pub fn new(cfg: &ImageCodecConfig, shape: (usize, usize, usize), noop_action: bool, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let pixels = shape.0 * shape.1 * shape.2;
        let actions = if noop_action { 3 } else { 2 };
        let mut rng = rng::substream(seed, "init");
        let mut p = ParamStore::new();
        let enc = PixelEncoder::new(&mut p, pixels, cfg, &mut rng);
        let a1 = Linear::new(&mut p, "actor.l1", cfg.symbols + pixels, cfg.hidden, true, &mut rng);
        let a2 = Linear::new(&mut p, "actor.l2", cfg.hidden, pixels * actions, true, &mut rng);
        Ok(ImagePolicy {
            cfg: cfg.clone(),
            shape,
            actions,
            params: p,
            enc,
            a1,
            a2,
        })
    }

    pub fn config(&self) -> &ImageCodecConfig {
        &self.cfg
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    pub fn pixels(&self) -> usize {
        self.shape.0 * self.shape.1 * self.shape.2
    }

    /// Number of per-pixel actions (2, or 3 with the keep action).
    pub fn num_actions(&self) -> usize {
        self.actions
    }

    /// Pixel change of action `a` for step size `δ`.
    pub fn action_delta(&self, a: usize, delta: f64) -> f64 {
        match a {
            0 => delta,
            1 => -delta,
            _ => 0.0,
        }
    }

    pub fn encode(&self, t: &mut Tape, x: Var) -> Var {
        self.enc.forward(t, x)
    }

    /// Per-pixel action log-probabilities, `(R·P) × A`, for `R` states
    /// (`y`: `R × S`, `img`: `R × P`). Row `r·P + p` belongs to pixel `p` of state `r`.
    pub fn action_logprobs(&self, t: &mut Tape, y: Var, img: Var) -> Var {
        let rows = t.shape(y).0;
        let centred = t.offset(img, -0.5);
        let x = t.concat_cols(y, centred);
        let h = self.a1.forward(t, x);
        let h = t.tanh(h);
        let o = self.a2.forward(t, h);
        let per_pixel = t.reshape(o, rows * self.pixels(), self.actions);
        t.log_softmax(per_pixel)
    }
}

/// Configuration section stored in image checkpoints.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImageHeader {
    model: ImageCodecConfig,
    shape: [usize; 3],
    noop_action: bool,
}

fn save_image_model(path: &Path, kind: &str, header: &ImageHeader, params: &ParamStore, step: u64) -> Result<()> {
    let config_toml = toml::to_string(header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    Checkpoint {
        kind: kind.into(),
        config_toml,
        vocab: None,
        step,
        params: params.clone(),
    }
    .write(path)
}

fn read_image_model(path: &Path, kind: &str) -> Result<(Checkpoint, ImageHeader)> {
    let ck = Checkpoint::read(path)?;
    if ck.kind != kind {
        return Err(Error::Checkpoint(format!("expected a {kind} checkpoint, found {}", ck.kind)));
    }
    let header: ImageHeader = toml::from_str(&ck.config_toml).map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok((ck, header))
}

impl ImageCodec {
    pub fn save(&self, path: &Path, step: u64) -> Result<()> {
        let (h, w, c) = self.shape;
        let header = ImageHeader {
            model: self.cfg.clone(),
            shape: [h, w, c],
            noop_action: false,
        };
        save_image_model(path, "image_codec", &header, &self.params, step)
    }

    pub fn load(path: &Path) -> Result<(Self, u64)> {
        let (ck, hd) = read_image_model(path, "image_codec")?;
        let [h, w, c] = hd.shape;
        let mut codec = ImageCodec::new(&hd.model, (h, w, c), 0)?;
        ck.restore_into(&mut codec.params)?;
        Ok((codec, ck.step))
    }
}

impl ImagePolicy {
    pub fn save(&self, path: &Path, step: u64) -> Result<()> {
        let (h, w, c) = self.shape;
        let header = ImageHeader {
            model: self.cfg.clone(),
            shape: [h, w, c],
            noop_action: self.actions == 3,
        };
        save_image_model(path, "image_policy", &header, &self.params, step)
    }

    pub fn load(path: &Path) -> Result<(Self, u64)> {
        let (ck, hd) = read_image_model(path, "image_policy")?;
        let [h, w, c] = hd.shape;
        let mut policy = ImagePolicy::new(&hd.model, (h, w, c), hd.noop_action, 0)?;
        ck.restore_into(&mut policy.params)?;
        Ok((policy, ck.step))
    }
}
