//! BKB-mini: spatial-temporal units over a fixed skeleton graph, spatial
//! pooling, and the classification and chronological heads.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::pipeline::Pipeline;
use crate::skeleton::SkeletonGraph;
use crate::tensor::{ReduceKind, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Channels of the encoded input, `blocks · C`.
    pub in_channels: usize,
    /// Output width of each STU; one entry per STU.
    pub widths: Vec<usize>,
    pub kernel: usize,
    /// One dilation per TPE inside every STU.
    pub dilations: Vec<usize>,
    /// Temporal stride applied at the final TPE of each STU.
    pub strides: Vec<usize>,
    pub joints: usize,
    pub num_classes: usize,
    pub chron_hidden: usize,
}

impl ModelConfig {
    pub fn new(in_channels: usize, joints: usize, num_classes: usize) -> Self {
        ModelConfig {
            in_channels,
            widths: vec![16, 32, 48],
            kernel: 3,
            dilations: vec![1, 2, 3],
            strides: vec![1, 2, 2],
            joints,
            num_classes,
            chron_hidden: 32,
        }
    }

    /// Replaces the STU widths; the first STU keeps stride 1 and every later
    /// one halves the frame rate.
    pub fn with_widths(mut self, widths: &[usize]) -> Self {
        self.strides = (0..widths.len()).map(|i| if i == 0 { 1 } else { 2 }).collect();
        self.widths = widths.to_vec();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.in_channels == 0 || self.joints == 0 || self.num_classes == 0 {
            return bad("in_channels, joints and num_classes must be positive".into());
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return bad(format!("widths must be non-empty and positive: {:?}", self.widths));
        }
        if self.strides.len() != self.widths.len() || self.strides.contains(&0) {
            return bad(format!(
                "need one positive stride per STU ({} STUs, strides {:?})",
                self.widths.len(),
                self.strides
            ));
        }
        if self.kernel.is_multiple_of(2) {
            return bad(format!("temporal kernel size must be odd, got {}", self.kernel));
        }
        if self.dilations.is_empty() || self.dilations.contains(&0) {
            return bad(format!("dilations must be non-empty and positive: {:?}", self.dilations));
        }
        if self.chron_hidden == 0 {
            return bad("chron_hidden must be positive".into());
        }
        Ok(())
    }

    pub fn embedding_dim(&self) -> usize {
        *self.widths.last().expect("validated")
    }

    pub fn total_stride(&self) -> usize {
        self.strides.iter().product()
    }

    /// Number of frame embeddings produced for `t` input frames.
    pub fn output_frames(&self, t: usize) -> usize {
        self.strides.iter().fold(t, |t, &s| t.div_ceil(s))
    }

    /// Frames seen by one output frame of a stride-1 network.
    pub fn receptive_field(&self) -> usize {
        let per_stu: usize = self.dilations.iter().map(|d| (self.kernel - 1) * d).sum();
        1 + self.widths.len() * per_stu
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Backbone,
    Classifier,
    Chron,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: ParamGroup,
    fan_in: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub backbone: usize,
    pub classifier: usize,
    pub chron: usize,
    pub total: usize,
}

fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let spec = |name: String, shape: Vec<usize>, group, fan_in| ParamSpec {
        name,
        shape,
        group,
        fan_in,
    };
    let mut specs = Vec::new();
    let mut c_in = cfg.in_channels;
    for (s, &w) in cfg.widths.iter().enumerate() {
        specs.push(spec(format!("stu{s}.sfe"), vec![w, c_in], ParamGroup::Backbone, c_in));
        for p in 0..cfg.dilations.len() {
            specs.push(spec(
                format!("stu{s}.tpe{p}"),
                vec![w, w, cfg.kernel],
                ParamGroup::Backbone,
                w * cfg.kernel,
            ));
        }
        c_in = w;
    }
    let (d, h, k) = (cfg.embedding_dim(), cfg.chron_hidden, cfg.num_classes);
    specs.push(spec("cls.w".into(), vec![k, d], ParamGroup::Classifier, d));
    specs.push(spec("cls.b".into(), vec![k], ParamGroup::Classifier, d));
    specs.push(spec("chron.w1".into(), vec![h, d], ParamGroup::Chron, d));
    specs.push(spec("chron.b1".into(), vec![h, 1], ParamGroup::Chron, d));
    specs.push(spec("chron.w2".into(), vec![1, h], ParamGroup::Chron, h));
    specs.push(spec("chron.b2".into(), vec![1, 1], ParamGroup::Chron, h));
    specs
}

/// Spatial feature extractor: per frame `relu(W · x_t · Â)`.
///
/// `x` is `C_in×T×N`, `w` is `C_out×C_in`, `adjacency` is `N×N` and
/// symmetric.
pub fn sfe_forward(tape: &mut Tape, x: Var, w: Var, adjacency: Var) -> Result<Var> {
    let sx = tape.shape(x).to_vec();
    let (sw, sa) = (tape.shape(w).to_vec(), tape.shape(adjacency).to_vec());
    if sx.len() != 3 || sa != [sx[2], sx[2]] || sw.len() != 2 || sw[1] != sx[0] {
        return Err(Error::ShapeMismatch {
            op: "sfe_forward",
            left: sx,
            right: sw,
        });
    }
    let (t, n) = (sx[1], sx[2]);
    let flat = tape.reshape(x, &[sx[0], t * n])?;
    let mixed = tape.matmul(w, flat)?;
    let rows = tape.reshape(mixed, &[sw[0] * t, n])?;
    let spread = tape.matmul(rows, adjacency)?;
    let out = tape.reshape(spread, &[sw[0], t, n])?;
    Ok(tape.relu(out))
}

/// Temporal pattern extractor: `relu(conv(x)) + x`, with the residual
/// subsampled when `stride > 1` and dropped when the widths differ.
pub fn tpe_forward(tape: &mut Tape, x: Var, w: Var, dilation: usize, stride: usize) -> Result<Var> {
    let conv = tape.conv_temporal_strided(x, w, dilation, stride)?;
    let act = tape.relu(conv);
    if tape.shape(w)[0] != tape.shape(w)[1] {
        return Ok(act);
    }
    let skip = if stride > 1 {
        tape.subsample(x, 1, stride)?
    } else {
        x
    };
    tape.add(act, skip)
}

/// Recorded outputs of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    /// `D×T'` frame embeddings.
    pub embeddings: Var,
    pub logits: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecognizerModel {
    config: ModelConfig,
    graph: SkeletonGraph,
    adjacency: Tensor,
    specs: Vec<ParamSpec>,
    params: Vec<Tensor>,
}

impl RecognizerModel {
    /// Fresh model with every parameter uniform in `±1/√fan_in`, drawn in
    /// declaration order from a generator seeded with `seed`.
    pub fn new(config: ModelConfig, graph: SkeletonGraph, seed: u64) -> Result<Self> {
        Self::check(&config, &graph)?;
        let specs = param_specs(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = specs
            .iter()
            .map(|s| {
                let bound = 1.0 / (s.fan_in as f64).sqrt();
                let n = s.shape.iter().product();
                let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
                Tensor::new(s.shape.clone(), data)
            })
            .collect::<Result<_>>()?;
        Ok(Self::assemble(config, graph, specs, params))
    }

    /// Builds a model from explicit parameter values in declaration order.
    pub fn from_params(config: ModelConfig, graph: SkeletonGraph, params: Vec<Tensor>) -> Result<Self> {
        Self::check(&config, &graph)?;
        let specs = param_specs(&config);
        if specs.len() != params.len() {
            return Err(Error::invalid(format!(
                "expected {} parameter tensors, got {}",
                specs.len(),
                params.len()
            )));
        }
        for (s, p) in specs.iter().zip(&params) {
            if s.shape != p.shape() {
                return Err(Error::ShapeMismatch {
                    op: "from_params",
                    left: s.shape.clone(),
                    right: p.shape().to_vec(),
                });
            }
            if !p.all_finite() {
                return Err(Error::NonFinite(format!("parameter {}", s.name)));
            }
        }
        Ok(Self::assemble(config, graph, specs, params))
    }

    fn check(config: &ModelConfig, graph: &SkeletonGraph) -> Result<()> {
        config.validate()?;
        if graph.joints() != config.joints {
            return Err(Error::invalid(format!(
                "config expects {} joints but the graph has {}",
                config.joints,
                graph.joints()
            )));
        }
        Ok(())
    }

    fn assemble(
        config: ModelConfig,
        graph: SkeletonGraph,
        specs: Vec<ParamSpec>,
        params: Vec<Tensor>,
    ) -> Self {
        let adjacency = graph.normalized_adjacency();
        RecognizerModel {
            config,
            graph,
            adjacency,
            specs,
            params,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn graph(&self) -> &SkeletonGraph {
        &self.graph
    }

    pub fn adjacency(&self) -> &Tensor {
        &self.adjacency
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.specs
            .iter()
            .position(|s| s.name == name)
            .map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.specs.iter().position(|s| s.name == name)?;
        Some(&mut self.params[i])
    }

    pub fn param_count(&self) -> ParamCount {
        let mut c = ParamCount {
            backbone: 0,
            classifier: 0,
            chron: 0,
            total: 0,
        };
        for (s, p) in self.specs.iter().zip(&self.params) {
            let n = p.numel();
            match s.group {
                ParamGroup::Backbone => c.backbone += n,
                ParamGroup::Classifier => c.classifier += n,
                ParamGroup::Chron => c.chron += n,
            }
            c.total += n;
        }
        c
    }

    /// All parameters concatenated in declaration order.
    pub fn flat_params(&self) -> Tensor {
        let data: Vec<f64> = self.params.iter().flat_map(|p| p.data().iter().copied()).collect();
        Tensor::from_vec(data)
    }

    /// Records every parameter as a gradient-receiving leaf.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(p.clone())).collect()
    }

    /// Records every parameter as a constant.
    pub fn bind_frozen(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.constant(p.clone())).collect()
    }

    /// Slices per-parameter variables out of a flat vector laid out as
    /// [`RecognizerModel::flat_params`].
    pub fn bind_flat(&self, tape: &mut Tape, flat: Var) -> Result<Vec<Var>> {
        let mut offset = 0;
        let mut vars = Vec::with_capacity(self.specs.len());
        for s in &self.specs {
            let n: usize = s.shape.iter().product();
            let piece = tape.narrow(flat, 0, offset, n)?;
            vars.push(tape.reshape(piece, &s.shape)?);
            offset += n;
        }
        Ok(vars)
    }

    /// Backbone and classification head on an encoded `C_in×T×N×M` input.
    pub fn forward_on(&self, tape: &mut Tape, vars: &[Var], input: Var) -> Result<ForwardVars> {
        let cfg = &self.config;
        let shape = tape.shape(input).to_vec();
        if shape.len() != 4 {
            return Err(Error::InvalidShape {
                shape,
                reason: "model input must be C×T×N×M".into(),
            });
        }
        if shape[0] != cfg.in_channels {
            return Err(Error::invalid(format!(
                "input has {} channels but the model consumes {}; the encoding does not match the model",
                shape[0], cfg.in_channels
            )));
        }
        if shape[2] != cfg.joints {
            return Err(Error::invalid(format!(
                "input has {} joints but the model expects {}",
                shape[2], cfg.joints
            )));
        }
        if !shape[1].is_multiple_of(cfg.total_stride()) {
            return Err(Error::invalid(format!(
                "{} frames are not divisible by the total stride {}",
                shape[1],
                cfg.total_stride()
            )));
        }
        let adjacency = tape.constant(self.adjacency.clone());
        let mut x = tape.reduce(input, 3, ReduceKind::Max)?;
        let mut p = 0;
        for &stride in &cfg.strides {
            x = sfe_forward(tape, x, vars[p], adjacency)?;
            p += 1;
            let last = cfg.dilations.len() - 1;
            for (i, &d) in cfg.dilations.iter().enumerate() {
                let s = if i == last { stride } else { 1 };
                x = tpe_forward(tape, x, vars[p], d, s)?;
                p += 1;
            }
        }
        let embeddings = tape.reduce(x, 2, ReduceKind::Mean)?;
        let pooled = tape.reduce(embeddings, 1, ReduceKind::Mean)?;
        let d = cfg.embedding_dim();
        let column = tape.reshape(pooled, &[d, 1])?;
        let z = tape.matmul(vars[p], column)?;
        let z = tape.reshape(z, &[cfg.num_classes])?;
        let logits = tape.add(z, vars[p + 1])?;
        Ok(ForwardVars { embeddings, logits })
    }

    /// Chronological head applied to every column of `D×T'` embeddings.
    pub fn chron_head_on(&self, tape: &mut Tape, vars: &[Var], embeddings: Var) -> Result<Var> {
        let shape = tape.shape(embeddings).to_vec();
        if shape.len() != 2 || shape[0] != self.config.embedding_dim() {
            return Err(Error::InvalidShape {
                shape,
                reason: format!("expected {}×T' embeddings", self.config.embedding_dim()),
            });
        }
        let t = shape[1];
        let n = vars.len();
        let (w1, b1, w2, b2) = (vars[n - 4], vars[n - 3], vars[n - 2], vars[n - 1]);
        let ones = tape.constant(Tensor::ones(&[1, t]));
        let h = tape.matmul(w1, embeddings)?;
        let bias = tape.matmul(b1, ones)?;
        let h = tape.add(h, bias)?;
        let h = tape.relu(h);
        let out = tape.matmul(w2, h)?;
        let bias = tape.matmul(b2, ones)?;
        let out = tape.add(out, bias)?;
        tape.reshape(out, &[t])
    }

    /// Frame embeddings (`D×T'`) and logits for one encoded input.
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        let mut tape = Tape::new();
        let vars = self.bind_frozen(&mut tape);
        let x = tape.constant(input.clone());
        let out = self.forward_on(&mut tape, &vars, x)?;
        Ok((
            tape.value(out.embeddings).clone(),
            tape.value(out.logits).data().to_vec(),
        ))
    }

    pub fn logits(&self, input: &Tensor) -> Result<Vec<f64>> {
        Ok(self.forward(input)?.1)
    }

    /// Chronological values `[f_φ(h_1), …, f_φ(h_T')]`.
    pub fn chron_head(&self, embeddings: &Tensor) -> Result<Vec<f64>> {
        if !embeddings.all_finite() {
            return Err(Error::NonFinite("frame embeddings".into()));
        }
        let mut tape = Tape::new();
        let vars = self.bind_frozen(&mut tape);
        let e = tape.constant(embeddings.clone());
        let v = self.chron_head_on(&mut tape, &vars, e)?;
        Ok(tape.value(v).data().to_vec())
    }

    /// Writes the manifest to `path` and the parameter payload next to it
    /// with a `.bin` extension.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<CheckpointManifest> {
        self.save_with(path, None)
    }

    /// As [`RecognizerModel::save`], recording the input pipeline the model
    /// was trained with.
    pub fn save_with(
        &self,
        path: impl AsRef<Path>,
        pipeline: Option<&Pipeline>,
    ) -> Result<CheckpointManifest> {
        let path = path.as_ref();
        let payload_path = path.with_extension("bin");
        let payload_name = payload_path
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::invalid(format!("bad checkpoint path {}", path.display())))?
            .to_string();
        let mut bytes = Vec::with_capacity(self.param_count().total * 8);
        let mut tensors = Vec::with_capacity(self.specs.len());
        for (s, p) in self.specs.iter().zip(&self.params) {
            tensors.push(TensorEntry {
                name: s.name.clone(),
                shape: s.shape.clone(),
                group: s.group,
                offset: bytes.len(),
                bytes: p.numel() * 8,
            });
            for v in p.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = CheckpointManifest {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            dtype: "f64".into(),
            byte_order: "little".into(),
            layout: "parameters concatenated in the order listed; each tensor row-major".into(),
            payload: payload_name,
            payload_bytes: bytes.len(),
            payload_sha256: hex::encode(Sha256::digest(&bytes)),
            config: self.config.clone(),
            graph: self.graph.clone(),
            pipeline: pipeline.copied(),
            tensors,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(&payload_path, &bytes).map_err(|e| Error::io(&payload_path, e))?;
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))?;
        Ok(manifest)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::load_with_pipeline(path)?.0)
    }

    pub fn load_with_pipeline(path: impl AsRef<Path>) -> Result<(Self, Option<Pipeline>)> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: CheckpointManifest = serde_json::from_str(&text)?;
        let bad = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        if manifest.format != CHECKPOINT_FORMAT {
            return Err(bad(format!("not a checkpoint manifest ({})", manifest.format)));
        }
        if manifest.version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: manifest.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        if manifest.dtype != "f64" || manifest.byte_order != "little" {
            return Err(bad(format!(
                "unsupported payload encoding {} / {}",
                manifest.dtype, manifest.byte_order
            )));
        }
        let payload_path = manifest.payload_path(path);
        let bytes = fs::read(&payload_path).map_err(|e| Error::io(&payload_path, e))?;
        let found = hex::encode(Sha256::digest(&bytes));
        if found != manifest.payload_sha256 {
            return Err(Error::HashMismatch {
                path: payload_path,
                expected: manifest.payload_sha256,
                found,
            });
        }
        let mut params = Vec::with_capacity(manifest.tensors.len());
        for entry in &manifest.tensors {
            let n: usize = entry.shape.iter().product();
            let end = entry.offset + n * 8;
            if entry.bytes != n * 8 || end > bytes.len() {
                return Err(bad(format!("tensor {} lies outside the payload", entry.name)));
            }
            let data = bytes[entry.offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            params.push(Tensor::new(entry.shape.clone(), data)?);
        }
        let model = Self::from_params(manifest.config, manifest.graph, params)?;
        let names: Vec<&str> = manifest.tensors.iter().map(|t| t.name.as_str()).collect();
        if model.specs.iter().map(|s| s.name.as_str()).ne(names) {
            return Err(bad("tensor names do not match the configuration".into()));
        }
        Ok((model, manifest.pipeline))
    }
}

pub const CHECKPOINT_FORMAT: &str = "chrono-dce-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: ParamGroup,
    /// Byte offset into the payload.
    pub offset: usize,
    pub bytes: usize,
}

/// JSON side of a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub dtype: String,
    pub byte_order: String,
    pub layout: String,
    pub payload: String,
    pub payload_bytes: usize,
    pub payload_sha256: String,
    pub config: ModelConfig,
    pub graph: SkeletonGraph,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pipeline: Option<Pipeline>,
    pub tensors: Vec<TensorEntry>,
}

impl CheckpointManifest {
    pub fn payload_path(&self, manifest_path: &Path) -> PathBuf {
        manifest_path
            .parent()
            .unwrap_or_else(|| Path::new(""))
            .join(&self.payload)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, DEFAULT_GRAD_CHECK_EPS};

    fn tiny_config(in_channels: usize) -> ModelConfig {
        ModelConfig {
            widths: vec![4, 5],
            strides: vec![1, 2],
            chron_hidden: 3,
            ..ModelConfig::new(in_channels, 9, 4)
        }
    }

    fn random_input(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn sfe_examples() {
        let mut t = Tape::new();
        let x = t.constant(random_input(&[2, 3, 2], 1));
        let w = t.constant(Tensor::identity(2));
        let a = t.constant(Tensor::identity(2));
        let y = sfe_forward(&mut t, x, w, a).unwrap();
        assert_eq!(t.value(y), &t.value(x).map(|v| v.max(0.0)));

        // two connected joints mix with weight 1/2
        let g = SkeletonGraph::new(2, 0, vec![(0, 1)]).unwrap();
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(vec![1, 1, 2], vec![0.0, 4.0]).unwrap());
        let w = t.constant(Tensor::identity(1));
        let a = t.constant(g.normalized_adjacency());
        let y = sfe_forward(&mut t, x, w, a).unwrap();
        assert!((t.value(y).data()[0] - 2.0).abs() < 1e-12);

        let bad = t.constant(Tensor::identity(3));
        assert!(sfe_forward(&mut t, x, w, bad).is_err());
    }

    #[test]
    fn tpe_examples() {
        let mut t = Tape::new();
        let xv = random_input(&[3, 8, 2], 2);
        let x = t.constant(xv.clone());
        let mut wv = Tensor::zeros(&[3, 3, 3]);
        for c in 0..3 {
            wv.set(&[c, c, 1], 1.0);
        }
        let w = t.constant(wv);
        let y = tpe_forward(&mut t, x, w, 1, 1).unwrap();
        let expect = xv.map(|v| v.max(0.0) + v);
        assert!(t.value(y).max_abs_diff(&expect).unwrap() < 1e-15);

        let x300 = t.constant(Tensor::zeros(&[3, 300, 1]));
        let y = tpe_forward(&mut t, x300, w, 1, 2).unwrap();
        assert_eq!(t.shape(y), &[3, 150, 1]);
    }

    #[test]
    fn receptive_field_and_output_frames() {
        let cfg = ModelConfig::new(27, 9, 10);
        assert_eq!(ModelConfig { widths: vec![16], strides: vec![1], ..cfg.clone() }.receptive_field(), 13);
        assert_eq!(cfg.output_frames(300), 75);
    }

    #[test]
    fn chron_head_param_count() {
        let cfg = ModelConfig::new(3, 9, 10);
        let m = RecognizerModel::new(cfg, SkeletonGraph::body9(), 0).unwrap();
        assert_eq!(m.param_count().chron, 1601);
    }

    #[test]
    fn dce_input_changes_only_first_layer() {
        let g = SkeletonGraph::body9();
        let a = RecognizerModel::new(ModelConfig::new(3, 9, 10), g.clone(), 0).unwrap();
        let b = RecognizerModel::new(ModelConfig::new(27, 9, 10), g, 0).unwrap();
        let (pa, pb) = (a.param_count(), b.param_count());
        assert_eq!(pb.backbone - pa.backbone, 24 * 16);
        assert_eq!((pa.classifier, pa.chron), (pb.classifier, pb.chron));
        for (x, y) in a.params().iter().zip(b.params()).skip(1) {
            assert_eq!(x.shape(), y.shape());
        }
    }

    #[test]
    fn forward_shapes_and_person_max() {
        let cfg = ModelConfig::new(27, 9, 6);
        let m = RecognizerModel::new(cfg, SkeletonGraph::body9(), 3).unwrap();
        let one = random_input(&[27, 300, 9, 1], 4);
        let (emb, logits) = m.forward(&one).unwrap();
        assert_eq!(emb.shape(), &[48, 75]);
        assert_eq!(logits.len(), 6);
        assert_eq!(m.chron_head(&emb).unwrap().len(), 75);

        let mut two = Tensor::zeros(&[27, 300, 9, 2]);
        for (i, v) in one.data().iter().enumerate() {
            two.data_mut()[2 * i] = *v;
            two.data_mut()[2 * i + 1] = *v;
        }
        assert_eq!(m.forward(&two).unwrap().1, logits);
        assert!(m.forward(&random_input(&[3, 300, 9, 1], 5)).is_err());
    }

    #[test]
    fn zero_chron_head_gives_zero_values() {
        let mut m = RecognizerModel::new(tiny_config(3), SkeletonGraph::body9(), 1).unwrap();
        for name in ["chron.w1", "chron.b1", "chron.w2", "chron.b2"] {
            let p = m.param_mut(name).unwrap();
            *p = Tensor::zeros(p.shape());
        }
        let emb = random_input(&[5, 7], 2);
        assert_eq!(m.chron_head(&emb).unwrap(), vec![0.0; 7]);
    }

    #[test]
    fn model_gradients_pass_grad_check() {
        let m = RecognizerModel::new(tiny_config(3), SkeletonGraph::body9(), 5).unwrap();
        let inputs = [random_input(&[3, 8, 9, 1], 6), random_input(&[3, 8, 9, 1], 7)];
        let err = grad_check(
            |t, flat| {
                let vars = m.bind_flat(t, flat)?;
                let mut total = None;
                for (i, x) in inputs.iter().enumerate() {
                    let x = t.constant(x.clone());
                    let out = m.forward_on(t, &vars, x)?;
                    let cls = crate::losses::cross_entropy(t, out.logits, i)?;
                    let v = m.chron_head_on(t, &vars, out.embeddings)?;
                    let crl = crate::losses::crl_loss(t, v)?;
                    let l = t.add(cls, crl)?;
                    total = Some(match total {
                        None => l,
                        Some(acc) => t.add(acc, l)?,
                    });
                }
                Ok(total.unwrap())
            },
            &m.flat_params(),
            DEFAULT_GRAD_CHECK_EPS,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = RecognizerModel::new(tiny_config(27), SkeletonGraph::body9(), 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck/model.json");
        let manifest = m.save(&path).unwrap();
        assert_eq!(manifest.payload, "model.bin");
        assert_eq!(RecognizerModel::load(&path).unwrap(), m);

        let bin = dir.path().join("ck/model.bin");
        let mut bytes = fs::read(&bin).unwrap();
        bytes[0] ^= 1;
        fs::write(&bin, bytes).unwrap();
        assert!(matches!(RecognizerModel::load(&path), Err(Error::HashMismatch { .. })));
    }
}
