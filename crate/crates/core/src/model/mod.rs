//! Shared-representation (SR) classifier, the fused-representation (FR)
//! baseline, and modality-aware fusion.
//!
//! SR runs text and image embeddings through the *same* stack and sums the
//! per-modality logits when text is present; when text is missing the image
//! logits are used as-is. FR concatenates `[text ; image]` (zero-filling
//! missing text) and runs one stack over the `2d`-wide input.

mod checkpoint;
mod stack;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use stack::{Block, BlockGrads, ParamKind, StackDims, StackGrads, StackParams, PARAM_SLOTS};

use crate::error::{Error, Result};
use crate::tensor::{GradTape, Matrix, Mode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "SR")]
    Sr,
    #[serde(rename = "FR")]
    Fr,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Sr => "SR",
            Variant::Fr => "FR",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SR" => Ok(Variant::Sr),
            "FR" => Ok(Variant::Fr),
            other => Err(Error::Config(format!("unknown variant `{other}` (expected SR or FR)"))),
        }
    }
}

/// How train-mode batch norm sees the two modalities under SR.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BnPooling {
    /// Text and image rows share one pass and one set of batch statistics.
    #[default]
    Pooled,
    /// One pass per modality, each with its own batch statistics.
    PerModality,
}

/// A mini-batch of memes. Image rows are always present; text rows are read
/// only where `text_present` is set.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalBatch {
    text: Option<Matrix>,
    image: Matrix,
    text_present: Vec<bool>,
    labels: Option<Vec<usize>>,
}

impl ModalBatch {
    pub fn new(
        text: Option<Matrix>,
        image: Matrix,
        text_present: Vec<bool>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let b = image.rows();
        if text_present.len() != b {
            return Err(Error::dim(format!(
                "{} text flags for {b} image rows",
                text_present.len()
            )));
        }
        match &text {
            Some(t) if t.shape() != image.shape() => {
                return Err(Error::dim(format!(
                    "text {:?} and image {:?} shapes differ",
                    t.shape(),
                    image.shape()
                )))
            }
            None if text_present.iter().any(|&p| p) => {
                return Err(Error::Usage("text flagged present but no text matrix given".into()))
            }
            _ => {}
        }
        if let Some(l) = &labels {
            if l.len() != b {
                return Err(Error::dim(format!("{} labels for {b} rows", l.len())));
            }
        }
        Ok(Self {
            text,
            image,
            text_present,
            labels,
        })
    }

    pub fn image_only(image: Matrix, labels: Option<Vec<usize>>) -> Result<Self> {
        let b = image.rows();
        Self::new(None, image, vec![false; b], labels)
    }

    pub fn rows(&self) -> usize {
        self.image.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.image.cols()
    }

    pub fn image(&self) -> &Matrix {
        &self.image
    }

    pub fn text(&self) -> Option<&Matrix> {
        self.text.as_ref()
    }

    pub fn text_present(&self) -> &[bool] {
        &self.text_present
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn text_rows(&self) -> Vec<usize> {
        self.text_present
            .iter()
            .enumerate()
            .filter_map(|(i, &p)| p.then_some(i))
            .collect()
    }

    fn text_subset(&self, rows: &[usize]) -> Option<Matrix> {
        self.text.as_ref().map(|t| t.select_rows(rows))
    }

    /// The same batch with every text flag cleared.
    pub fn without_text(&self) -> Self {
        Self {
            text: None,
            image: self.image.clone(),
            text_present: vec![false; self.rows()],
            labels: self.labels.clone(),
        }
    }
}

/// Adds `text_logits` (one row per entry of `text_rows`) onto the matching image rows.
pub fn fuse_logits(image_logits: &Matrix, text_logits: &Matrix, text_rows: &[usize]) -> Result<Matrix> {
    if text_logits.rows() != text_rows.len() || text_logits.cols() != image_logits.cols() {
        return Err(Error::dim(format!(
            "text logits {:?} for {} text rows over image logits {:?}",
            text_logits.shape(),
            text_rows.len(),
            image_logits.shape()
        )));
    }
    let mut fused = image_logits.clone();
    for (k, &r) in text_rows.iter().enumerate() {
        for (f, t) in fused.row_mut(r).iter_mut().zip(text_logits.row(k)) {
            *f += t;
        }
    }
    Ok(fused)
}

/// Row-wise argmax, lowest index on ties.
pub fn predict(logits: &Matrix) -> Result<Vec<usize>> {
    if logits.cols() < 2 {
        return Err(Error::dim(format!("predict needs >= 2 classes, got {}", logits.cols())));
    }
    (0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            if row.iter().any(|v| v.is_nan()) {
                return Err(Error::Numeric(format!("NaN logit in row {r}")));
            }
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            Ok(best)
        })
        .collect()
}

/// Parameters of the shared-representation network. One stack serves both modalities.
#[derive(Clone, Debug, PartialEq)]
pub struct SharedStackParams(pub StackParams);

impl SharedStackParams {
    pub fn embed_dim(&self) -> usize {
        self.0.dims().input
    }
}

/// Parameters of the fused baseline; the stack input is `2d` wide.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedStackParams(StackParams);

impl FusedStackParams {
    pub fn new(stack: StackParams) -> Result<Self> {
        if !stack.dims().input.is_multiple_of(2) {
            return Err(Error::dim(format!(
                "fused stack input {} is not twice an embedding dimension",
                stack.dims().input
            )));
        }
        Ok(Self(stack))
    }

    pub fn embed_dim(&self) -> usize {
        self.0.dims().input / 2
    }

    pub fn stack(&self) -> &StackParams {
        &self.0
    }

    pub fn stack_mut(&mut self) -> &mut StackParams {
        &mut self.0
    }

    pub fn into_stack(self) -> StackParams {
        self.0
    }
}

#[derive(Debug)]
enum SrPasses {
    Pooled(GradTape),
    PerModality { image: GradTape, text: Option<GradTape> },
}

/// Backward state of one SR forward evaluation.
#[derive(Debug)]
pub struct SrTape {
    passes: SrPasses,
    rows: usize,
    text_rows: Vec<usize>,
}

impl SrTape {
    /// Rows whose text contributed to the fused logits.
    pub fn text_rows(&self) -> &[usize] {
        &self.text_rows
    }
}

pub fn sr_forward<R: Rng + ?Sized>(
    params: &mut SharedStackParams,
    batch: &ModalBatch,
    mode: Mode,
    pooling: BnPooling,
    rng: &mut R,
) -> Result<(Matrix, SrTape)> {
    let b = batch.rows();
    let mut text_rows = batch.text_rows();
    let stack = &mut params.0;
    match pooling {
        BnPooling::Pooled => {
            let stacked = match batch.text_subset(&text_rows) {
                Some(text) if !text_rows.is_empty() => Matrix::vstack(&[batch.image(), &text])?,
                _ => batch.image().clone(),
            };
            let (all_logits, tape) = stack.forward(&stacked, mode, rng)?;
            let image_rows: Vec<usize> = (0..b).collect();
            let text_idx: Vec<usize> = (b..all_logits.rows()).collect();
            let fused = fuse_logits(
                &all_logits.select_rows(&image_rows),
                &all_logits.select_rows(&text_idx),
                &text_rows,
            )?;
            Ok((
                fused,
                SrTape {
                    passes: SrPasses::Pooled(tape),
                    rows: b,
                    text_rows,
                },
            ))
        }
        BnPooling::PerModality => {
            // A lone text row cannot form train-mode batch statistics; it is
            // treated as text-absent for this step.
            if mode == Mode::Train && text_rows.len() < 2 {
                text_rows.clear();
            }
            let (image_logits, image_tape) = stack.forward(batch.image(), mode, rng)?;
            let (fused, text_tape) = match batch.text_subset(&text_rows) {
                Some(text) if !text_rows.is_empty() => {
                    let (text_logits, tape) = stack.forward(&text, mode, rng)?;
                    (fuse_logits(&image_logits, &text_logits, &text_rows)?, Some(tape))
                }
                _ => (image_logits, None),
            };
            Ok((
                fused,
                SrTape {
                    passes: SrPasses::PerModality {
                        image: image_tape,
                        text: text_tape,
                    },
                    rows: b,
                    text_rows,
                },
            ))
        }
    }
}

/// Eval-mode SR inference: logit sum where text is present, image logits otherwise.
pub fn sr_infer(params: &SharedStackParams, batch: &ModalBatch) -> Result<Matrix> {
    let image_logits = params.0.infer(batch.image())?;
    let text_rows = batch.text_rows();
    match batch.text_subset(&text_rows) {
        Some(text) if !text_rows.is_empty() => {
            let text_logits = params.0.infer(&text)?;
            fuse_logits(&image_logits, &text_logits, &text_rows)
        }
        _ => Ok(image_logits),
    }
}

/// Gradients of the shared parameters. Text-present rows route `dlogits` into
/// both branches; all of it lands in the single shared parameter set.
pub fn sr_backward(params: &SharedStackParams, tape: &mut SrTape, dlogits: &Matrix) -> Result<StackGrads> {
    if dlogits.rows() != tape.rows {
        return Err(Error::dim(format!(
            "dlogits has {} rows, forward had {}",
            dlogits.rows(),
            tape.rows
        )));
    }
    let stack = &params.0;
    let d_text = dlogits.select_rows(&tape.text_rows);
    match &mut tape.passes {
        SrPasses::Pooled(pass) => {
            let d_all = Matrix::vstack(&[dlogits, &d_text])?;
            Ok(stack.backward(pass, &d_all)?.0)
        }
        SrPasses::PerModality { image, text } => {
            let (mut grads, _) = stack.backward(image, dlogits)?;
            if let Some(text) = text {
                let (text_grads, _) = stack.backward(text, &d_text)?;
                grads.accumulate(&text_grads)?;
            }
            Ok(grads)
        }
    }
}

/// `[text_i ; image_i]` per row, with zeros standing in for absent text.
pub fn fused_input(batch: &ModalBatch) -> Result<Matrix> {
    let (b, d) = batch.image().shape();
    let mut text = Matrix::zeros(b, d);
    if let Some(t) = batch.text() {
        for r in batch.text_rows() {
            text.row_mut(r).copy_from_slice(t.row(r));
        }
    }
    Matrix::hstack(&text, batch.image())
}

pub fn fr_forward<R: Rng + ?Sized>(
    params: &mut FusedStackParams,
    batch: &ModalBatch,
    mode: Mode,
    rng: &mut R,
) -> Result<(Matrix, GradTape)> {
    check_embed_dim(params.embed_dim(), batch)?;
    params.0.forward(&fused_input(batch)?, mode, rng)
}

pub fn fr_infer(params: &FusedStackParams, batch: &ModalBatch) -> Result<Matrix> {
    check_embed_dim(params.embed_dim(), batch)?;
    params.0.infer(&fused_input(batch)?)
}

pub fn fr_backward(params: &FusedStackParams, tape: &mut GradTape, dlogits: &Matrix) -> Result<StackGrads> {
    Ok(params.0.backward(tape, dlogits)?.0)
}

fn check_embed_dim(expected: usize, batch: &ModalBatch) -> Result<()> {
    if batch.embed_dim() != expected {
        return Err(Error::dim(format!(
            "model expects embedding dim {expected}, batch has {}",
            batch.embed_dim()
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelShape {
    pub embed_dim: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub classes: usize,
    pub dropout_rate: f32,
    pub bn_eps: f32,
    pub bn_momentum: f32,
}

/// Either model variant behind one interface.
#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Shared(SharedStackParams),
    Fused(FusedStackParams),
}

#[derive(Debug)]
pub enum ModelTape {
    Shared(SrTape),
    Fused(GradTape),
}

impl Model {
    pub fn init<R: Rng + ?Sized>(variant: Variant, shape: ModelShape, rng: &mut R) -> Result<Self> {
        let input = match variant {
            Variant::Sr => shape.embed_dim,
            Variant::Fr => 2 * shape.embed_dim,
        };
        let dims = StackDims {
            input,
            hidden1: shape.hidden1,
            hidden2: shape.hidden2,
            classes: shape.classes,
        };
        let stack = StackParams::init(dims, shape.dropout_rate, shape.bn_eps, shape.bn_momentum, rng);
        stack.validate()?;
        Self::from_stack(variant, stack)
    }

    pub fn from_stack(variant: Variant, stack: StackParams) -> Result<Self> {
        Ok(match variant {
            Variant::Sr => Model::Shared(SharedStackParams(stack)),
            Variant::Fr => Model::Fused(FusedStackParams::new(stack)?),
        })
    }

    pub fn variant(&self) -> Variant {
        match self {
            Model::Shared(_) => Variant::Sr,
            Model::Fused(_) => Variant::Fr,
        }
    }

    pub fn stack(&self) -> &StackParams {
        match self {
            Model::Shared(p) => &p.0,
            Model::Fused(p) => &p.0,
        }
    }

    pub fn stack_mut(&mut self) -> &mut StackParams {
        match self {
            Model::Shared(p) => &mut p.0,
            Model::Fused(p) => &mut p.0,
        }
    }

    pub fn embed_dim(&self) -> usize {
        match self {
            Model::Shared(p) => p.embed_dim(),
            Model::Fused(p) => p.embed_dim(),
        }
    }

    pub fn classes(&self) -> usize {
        self.stack().dims().classes
    }

    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        batch: &ModalBatch,
        mode: Mode,
        pooling: BnPooling,
        rng: &mut R,
    ) -> Result<(Matrix, ModelTape)> {
        match self {
            Model::Shared(p) => {
                check_embed_dim(p.embed_dim(), batch)?;
                let (logits, tape) = sr_forward(p, batch, mode, pooling, rng)?;
                Ok((logits, ModelTape::Shared(tape)))
            }
            Model::Fused(p) => {
                let (logits, tape) = fr_forward(p, batch, mode, rng)?;
                Ok((logits, ModelTape::Fused(tape)))
            }
        }
    }

    pub fn backward(&self, tape: &mut ModelTape, dlogits: &Matrix) -> Result<StackGrads> {
        match (self, tape) {
            (Model::Shared(p), ModelTape::Shared(t)) => sr_backward(p, t, dlogits),
            (Model::Fused(p), ModelTape::Fused(t)) => fr_backward(p, t, dlogits),
            _ => Err(Error::Usage("tape comes from a different model variant".into())),
        }
    }

    pub fn infer(&self, batch: &ModalBatch) -> Result<Matrix> {
        match self {
            Model::Shared(p) => {
                check_embed_dim(p.embed_dim(), batch)?;
                sr_infer(p, batch)
            }
            Model::Fused(p) => fr_infer(p, batch),
        }
    }
}
