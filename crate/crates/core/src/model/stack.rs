use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{
    batchnorm_backward, batchnorm_forward, batchnorm_infer, dropout, dropout_backward, linear_backward, relu,
    relu_backward, BatchNormState, GradTape, Linear, Matrix, Mode, TapeEntry, DEFAULT_BN_EPS, DEFAULT_BN_MOMENTUM,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StackDims {
    pub input: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub classes: usize,
}

/// FC → BN → ReLU → dropout.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub linear: Linear,
    pub bn: BatchNormState,
}

impl Block {
    fn zeros(din: usize, dout: usize, bn_eps: f32, bn_momentum: f32) -> Self {
        Self {
            linear: Linear::zeros(din, dout),
            bn: BatchNormState::with_constants(dout, bn_eps, bn_momentum),
        }
    }

    fn forward<R: Rng + ?Sized>(
        &mut self,
        x: &Matrix,
        dropout_rate: f32,
        mode: Mode,
        rng: &mut R,
        tape: &mut GradTape,
    ) -> Result<Matrix> {
        let z = self.linear.forward(x)?;
        tape.push(TapeEntry::Linear { input: x.clone() });
        let (normed, cache) = batchnorm_forward(&z, &mut self.bn, mode)?;
        tape.push(TapeEntry::BatchNorm(cache));
        let activated = relu(&normed);
        tape.push(TapeEntry::Relu { input: normed });
        let (out, mask) = dropout(&activated, dropout_rate, rng, mode)?;
        tape.push(TapeEntry::Dropout { mask });
        Ok(out)
    }

    fn infer(&self, x: &Matrix) -> Result<Matrix> {
        let z = self.linear.forward(x)?;
        Ok(relu(&batchnorm_infer(&z, &self.bn)?))
    }

    fn backward(&self, dy: &Matrix, tape: &mut GradTape) -> Result<(BlockGrads, Matrix)> {
        let mask = tape.pop_dropout()?;
        let d_act = dropout_backward(dy, &mask)?;
        let normed = tape.pop_relu()?;
        let d_norm = relu_backward(&d_act, &normed)?;
        let cache = tape.pop_batchnorm()?;
        let bn = batchnorm_backward(&d_norm, &cache, &self.bn.gamma)?;
        let input = tape.pop_linear()?;
        let lin = linear_backward(&bn.dx, &input, &self.linear.weight)?;
        Ok((
            BlockGrads {
                weight: lin.dw,
                bias: bn.dx_column_sums,
                gamma: bn.dgamma,
                beta: bn.dbeta,
            },
            lin.dx,
        ))
    }
}

/// Role of a parameter tensor; decides whether decoupled weight decay applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    BnScale,
    BnShift,
}

impl ParamKind {
    pub fn decays(self) -> bool {
        matches!(self, ParamKind::Weight)
    }
}

pub const PARAM_SLOTS: usize = 10;

/// Two FC/BN/ReLU/dropout blocks followed by a linear head.
#[derive(Clone, Debug, PartialEq)]
pub struct StackParams {
    pub block1: Block,
    pub block2: Block,
    pub head: Linear,
    pub dropout_rate: f32,
}

impl StackParams {
    pub fn zeros(dims: StackDims, dropout_rate: f32) -> Self {
        Self::zeros_with_bn(dims, dropout_rate, DEFAULT_BN_EPS, DEFAULT_BN_MOMENTUM)
    }

    pub fn zeros_with_bn(dims: StackDims, dropout_rate: f32, bn_eps: f32, bn_momentum: f32) -> Self {
        Self {
            block1: Block::zeros(dims.input, dims.hidden1, bn_eps, bn_momentum),
            block2: Block::zeros(dims.hidden1, dims.hidden2, bn_eps, bn_momentum),
            head: Linear::zeros(dims.hidden2, dims.classes),
            dropout_rate,
        }
    }

    /// He-initialized linear layers, identity batch norm.
    pub fn init<R: Rng + ?Sized>(
        dims: StackDims,
        dropout_rate: f32,
        bn_eps: f32,
        bn_momentum: f32,
        rng: &mut R,
    ) -> Self {
        let mut params = Self::zeros_with_bn(dims, dropout_rate, bn_eps, bn_momentum);
        params.block1.linear = Linear::he_init(dims.input, dims.hidden1, rng);
        params.block2.linear = Linear::he_init(dims.hidden1, dims.hidden2, rng);
        params.head = Linear::he_init(dims.hidden2, dims.classes, rng);
        params
    }

    pub fn dims(&self) -> StackDims {
        StackDims {
            input: self.block1.linear.in_features(),
            hidden1: self.block1.linear.out_features(),
            hidden2: self.block2.linear.out_features(),
            classes: self.head.out_features(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dims();
        if self.block2.linear.in_features() != d.hidden1
            || self.head.in_features() != d.hidden2
            || self.block1.bn.features() != d.hidden1
            || self.block2.bn.features() != d.hidden2
            || self.block1.linear.bias.len() != d.hidden1
            || self.block2.linear.bias.len() != d.hidden2
            || self.head.bias.len() != d.classes
        {
            return Err(Error::dim("stack layers do not chain"));
        }
        if d.classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", d.classes)));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        self.block1.bn.validate()?;
        self.block2.bn.validate()
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        let input = self.dims().input;
        if x.cols() != input {
            return Err(Error::dim(format!(
                "stack expects {input} input features, got {}",
                x.cols()
            )));
        }
        Ok(())
    }

    /// Forward pass recording a tape for [`StackParams::backward`].
    pub fn forward<R: Rng + ?Sized>(&mut self, x: &Matrix, mode: Mode, rng: &mut R) -> Result<(Matrix, GradTape)> {
        self.check_input(x)?;
        let mut tape = GradTape::new();
        let rate = self.dropout_rate;
        let h1 = self.block1.forward(x, rate, mode, rng, &mut tape)?;
        let h2 = self.block2.forward(&h1, rate, mode, rng, &mut tape)?;
        let logits = self.head.forward(&h2)?;
        tape.push(TapeEntry::Linear { input: h2 });
        Ok((logits, tape))
    }

    /// Eval-mode forward without a tape or any state mutation.
    pub fn infer(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let h1 = self.block1.infer(x)?;
        let h2 = self.block2.infer(&h1)?;
        self.head.forward(&h2)
    }

    /// Returns parameter gradients and the gradient with respect to the input.
    pub fn backward(&self, tape: &mut GradTape, dlogits: &Matrix) -> Result<(StackGrads, Matrix)> {
        tape.begin_backward()?;
        let h2 = tape.pop_linear()?;
        let head = linear_backward(dlogits, &h2, &self.head.weight)?;
        let (block2, dh1) = self.block2.backward(&head.dx, tape)?;
        let (block1, dx) = self.block1.backward(&dh1, tape)?;
        if !tape.is_empty() {
            return Err(Error::Usage("tape has leftover entries after backward".into()));
        }
        Ok((
            StackGrads {
                block1,
                block2,
                head_weight: head.dw,
                head_bias: head.db,
            },
            dx,
        ))
    }

    /// Learnable tensors in declaration order.
    pub fn slots_mut(&mut self) -> [(&mut [f32], ParamKind); PARAM_SLOTS] {
        [
            (self.block1.linear.weight.data_mut(), ParamKind::Weight),
            (&mut self.block1.linear.bias, ParamKind::Bias),
            (&mut self.block1.bn.gamma, ParamKind::BnScale),
            (&mut self.block1.bn.beta, ParamKind::BnShift),
            (self.block2.linear.weight.data_mut(), ParamKind::Weight),
            (&mut self.block2.linear.bias, ParamKind::Bias),
            (&mut self.block2.bn.gamma, ParamKind::BnScale),
            (&mut self.block2.bn.beta, ParamKind::BnShift),
            (self.head.weight.data_mut(), ParamKind::Weight),
            (&mut self.head.bias, ParamKind::Bias),
        ]
    }

    pub fn slots(&self) -> [&[f32]; PARAM_SLOTS] {
        [
            self.block1.linear.weight.data(),
            &self.block1.linear.bias,
            &self.block1.bn.gamma,
            &self.block1.bn.beta,
            self.block2.linear.weight.data(),
            &self.block2.linear.bias,
            &self.block2.bn.gamma,
            &self.block2.bn.beta,
            self.head.weight.data(),
            &self.head.bias,
        ]
    }

    pub fn slot_lengths(&self) -> Vec<usize> {
        self.slots().iter().map(|s| s.len()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockGrads {
    pub weight: Matrix,
    pub bias: Vec<f32>,
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
}

/// Gradients mirroring [`StackParams`] slot by slot.
#[derive(Clone, Debug, PartialEq)]
pub struct StackGrads {
    pub block1: BlockGrads,
    pub block2: BlockGrads,
    pub head_weight: Matrix,
    pub head_bias: Vec<f32>,
}

impl StackGrads {
    pub fn zeros_like(params: &StackParams) -> Self {
        let block = |b: &Block| BlockGrads {
            weight: Matrix::zeros(b.linear.weight.rows(), b.linear.weight.cols()),
            bias: vec![0.0; b.linear.bias.len()],
            gamma: vec![0.0; b.bn.gamma.len()],
            beta: vec![0.0; b.bn.beta.len()],
        };
        Self {
            block1: block(&params.block1),
            block2: block(&params.block2),
            head_weight: Matrix::zeros(params.head.weight.rows(), params.head.weight.cols()),
            head_bias: vec![0.0; params.head.bias.len()],
        }
    }

    pub fn slots(&self) -> [&[f32]; PARAM_SLOTS] {
        [
            self.block1.weight.data(),
            &self.block1.bias,
            &self.block1.gamma,
            &self.block1.beta,
            self.block2.weight.data(),
            &self.block2.bias,
            &self.block2.gamma,
            &self.block2.beta,
            self.head_weight.data(),
            &self.head_bias,
        ]
    }

    pub fn slots_mut(&mut self) -> [&mut [f32]; PARAM_SLOTS] {
        [
            self.block1.weight.data_mut(),
            &mut self.block1.bias,
            &mut self.block1.gamma,
            &mut self.block1.beta,
            self.block2.weight.data_mut(),
            &mut self.block2.bias,
            &mut self.block2.gamma,
            &mut self.block2.beta,
            self.head_weight.data_mut(),
            &mut self.head_bias,
        ]
    }

    pub fn accumulate(&mut self, other: &StackGrads) -> Result<()> {
        for (dst, src) in self.slots_mut().into_iter().zip(other.slots()) {
            if dst.len() != src.len() {
                return Err(Error::dim("gradient slot length mismatch"));
            }
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.slots().iter().all(|s| s.iter().all(|&v| v == 0.0))
    }
}
