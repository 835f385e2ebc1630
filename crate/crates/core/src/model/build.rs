use serde::{Deserialize, Serialize};

use super::{ModelGraph, Node, NodeId, Op, Param, ParamRole};
use crate::error::{Error, Result};
use crate::nn::BatchNormState;
use crate::scalar::Scalar;
use crate::tensor::{ConvSpec, Shape4};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    DensenetMini,
    ResnetMini,
}

impl Architecture {
    pub const ALL: [Architecture; 2] = [Architecture::DensenetMini, Architecture::ResnetMini];

    pub fn as_str(&self) -> &'static str {
        match self {
            Architecture::DensenetMini => "densenet-mini",
            Architecture::ResnetMini => "resnet-mini",
        }
    }

    pub(crate) fn tag(&self) -> u8 {
        match self {
            Architecture::DensenetMini => 0,
            Architecture::ResnetMini => 1,
        }
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Architecture {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "densenet-mini" => Ok(Architecture::DensenetMini),
            "resnet-mini" => Ok(Architecture::ResnetMini),
            other => Err(format!(
                "unknown architecture `{other}` (valid: densenet-mini, resnet-mini)"
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Tiny,
    Small,
}

impl std::str::FromStr for Preset {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "tiny" => Ok(Preset::Tiny),
            "small" => Ok(Preset::Small),
            other => Err(format!("unknown preset `{other}` (valid: tiny, small)")),
        }
    }
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Preset::Tiny => "tiny",
            Preset::Small => "small",
        })
    }
}

/// Dense blocks separated by transition layers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseNetSpec {
    pub stem_channels: usize,
    pub layers_per_block: Vec<usize>,
    pub growth_rate: usize,
}

/// Residual stages. Each stage opens with a projection ("convolution")
/// block of stride 2 followed by `blocks - 1` identity blocks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResNetSpec {
    pub stem_channels: usize,
    pub stage_widths: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BlockSpec {
    Dense(DenseNetSpec),
    Residual(ResNetSpec),
}

impl BlockSpec {
    pub fn preset(arch: Architecture, preset: Preset) -> BlockSpec {
        match (arch, preset) {
            (Architecture::DensenetMini, Preset::Tiny) => BlockSpec::Dense(DenseNetSpec {
                stem_channels: 8,
                layers_per_block: vec![2, 2],
                growth_rate: 4,
            }),
            (Architecture::DensenetMini, Preset::Small) => BlockSpec::Dense(DenseNetSpec {
                stem_channels: 16,
                layers_per_block: vec![4, 4, 4],
                growth_rate: 8,
            }),
            (Architecture::ResnetMini, Preset::Tiny) => BlockSpec::Residual(ResNetSpec {
                stem_channels: 8,
                stage_widths: vec![8, 16],
                blocks_per_stage: vec![2, 2],
            }),
            (Architecture::ResnetMini, Preset::Small) => BlockSpec::Residual(ResNetSpec {
                stem_channels: 16,
                stage_widths: vec![16, 32, 64],
                blocks_per_stage: vec![2, 2, 2],
            }),
        }
    }

    pub fn architecture(&self) -> Architecture {
        match self {
            BlockSpec::Dense(_) => Architecture::DensenetMini,
            BlockSpec::Residual(_) => Architecture::ResnetMini,
        }
    }
}

/// Everything needed to rebuild a model graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub blocks: BlockSpec,
    /// (channels, height, width) of one input sample.
    pub input: (usize, usize, usize),
    pub classes: usize,
    pub dropout: f64,
}

impl ModelSpec {
    pub fn preset(arch: Architecture, preset: Preset, height: usize, width: usize) -> Self {
        ModelSpec {
            blocks: BlockSpec::preset(arch, preset),
            input: (3, height, width),
            classes: 5,
            dropout: 0.5,
        }
    }

    pub fn architecture(&self) -> Architecture {
        self.blocks.architecture()
    }
}

/// Incremental graph construction with shape checking at every node.
pub struct GraphBuilder<T> {
    nodes: Vec<Node>,
    params: Vec<Param<T>>,
    bn_states: Vec<BatchNormState<T>>,
}

impl<T: Scalar> GraphBuilder<T> {
    /// Starts a graph whose input samples have shape (c, h, w).
    pub fn new(c: usize, h: usize, w: usize) -> Result<(Self, NodeId)> {
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidShape(Shape4::new(1, c, h, w)));
        }
        let b = GraphBuilder {
            nodes: vec![Node {
                name: "input".into(),
                op: Op::Input,
                inputs: vec![],
                shape: Shape4::new(1, c, h, w),
            }],
            params: Vec::new(),
            bn_states: Vec::new(),
        };
        Ok((b, 0))
    }

    pub fn shape(&self, id: NodeId) -> Shape4 {
        self.nodes[id].shape
    }

    fn push(
        &mut self,
        name: impl Into<String>,
        op: Op,
        inputs: Vec<NodeId>,
        shape: Shape4,
    ) -> NodeId {
        self.nodes.push(Node {
            name: name.into(),
            op,
            inputs,
            shape,
        });
        self.nodes.len() - 1
    }

    fn param(&mut self, name: String, dims: Vec<usize>, role: ParamRole, fan_in: usize) -> usize {
        let len = dims.iter().product();
        self.params.push(Param {
            name,
            dims,
            role,
            fan_in,
            value: vec![T::zero(); len],
            grad: vec![T::zero(); len],
        });
        self.params.len() - 1
    }

    /// Convolution layer. Convolutions whose output is batch-normalized
    /// before any other use are built without a bias, since the
    /// normalization cancels it.
    pub fn conv(
        &mut self,
        x: NodeId,
        out_channels: usize,
        spec: ConvSpec,
        bias: bool,
        name: &str,
    ) -> Result<NodeId> {
        let s = self.shape(x);
        let (oh, ow) = spec.output_hw(s.h, s.w)?;
        let (kh, kw) = spec.kernel;
        let fan_in = s.c * kh * kw;
        let weight = self.param(
            format!("{name}.weight"),
            vec![out_channels, s.c, kh, kw],
            ParamRole::Weight,
            fan_in,
        );
        let bias = bias.then(|| {
            self.param(
                format!("{name}.bias"),
                vec![out_channels],
                ParamRole::Bias,
                fan_in,
            )
        });
        Ok(self.push(
            name,
            Op::Conv { weight, bias, spec },
            vec![x],
            Shape4::new(1, out_channels, oh, ow),
        ))
    }

    pub fn batchnorm(&mut self, x: NodeId, name: &str) -> NodeId {
        let s = self.shape(x);
        let gamma = self.param(format!("{name}.gamma"), vec![s.c], ParamRole::Gamma, 1);
        let beta = self.param(format!("{name}.beta"), vec![s.c], ParamRole::Beta, 1);
        self.bn_states.push(BatchNormState::new(s.c));
        let state = self.bn_states.len() - 1;
        self.push(name, Op::BatchNorm { gamma, beta, state }, vec![x], s)
    }

    pub fn relu(&mut self, x: NodeId, name: &str) -> NodeId {
        let s = self.shape(x);
        self.push(name, Op::Relu, vec![x], s)
    }

    pub fn avg_pool(&mut self, x: NodeId, name: &str) -> NodeId {
        let s = self.shape(x);
        self.push(
            name,
            Op::AvgPool,
            vec![x],
            Shape4::new(1, s.c, s.h.div_ceil(2), s.w.div_ceil(2)),
        )
    }

    pub fn global_avg_pool(&mut self, x: NodeId, name: &str) -> NodeId {
        let s = self.shape(x);
        self.push(name, Op::GlobalAvgPool, vec![x], Shape4::new(1, s.c, 1, 1))
    }

    pub fn dropout(&mut self, x: NodeId, rate: f64, name: &str) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate {rate} outside [0, 1)"
            )));
        }
        let s = self.shape(x);
        Ok(self.push(name, Op::Dropout { rate }, vec![x], s))
    }

    pub fn dense(&mut self, x: NodeId, units: usize, name: &str) -> NodeId {
        let m = self.shape(x).sample_len();
        let weight = self.param(
            format!("{name}.weight"),
            vec![m, units],
            ParamRole::Weight,
            m,
        );
        let bias = self.param(format!("{name}.bias"), vec![units], ParamRole::Bias, m);
        self.push(
            name,
            Op::Dense {
                weight,
                bias,
                units,
            },
            vec![x],
            Shape4::new(1, units, 1, 1),
        )
    }

    pub fn softmax(&mut self, x: NodeId, name: &str) -> NodeId {
        let s = self.shape(x);
        self.push(name, Op::Softmax, vec![x], s)
    }

    pub fn concat(&mut self, xs: &[NodeId], name: &str) -> Result<NodeId> {
        let first = self.shape(xs[0]);
        let mut c = 0;
        for &x in xs {
            let s = self.shape(x);
            if (s.h, s.w) != (first.h, first.w) {
                return Err(Error::ShapeMismatch {
                    left: first,
                    right: s,
                });
            }
            c += s.c;
        }
        Ok(self.push(
            name,
            Op::Concat,
            xs.to_vec(),
            Shape4::new(1, c, first.h, first.w),
        ))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId, name: &str) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::ShapeMismatch {
                left: sa,
                right: sb,
            });
        }
        Ok(self.push(name, Op::Add, vec![a, b], sa))
    }

    /// One dense-block layer: batchnorm → relu → 3×3 conv producing
    /// `growth` channels, concatenated onto the running feature stack.
    pub fn dense_layer(&mut self, x: NodeId, growth: usize, name: &str) -> Result<NodeId> {
        let entry = self.shape(x).c;
        let bn = self.batchnorm(x, &format!("{name}.bn"));
        let r = self.relu(bn, &format!("{name}.relu"));
        let conv = self.conv(r, growth, ConvSpec::same(3), false, &format!("{name}.conv"))?;
        let out = self.concat(&[x, conv], &format!("{name}.concat"))?;
        let exit = self.shape(out).c;
        if exit != entry + growth {
            return Err(Error::InvalidArgument(format!(
                "{name}: channel recurrence broken ({entry} + {growth} != {exit})"
            )));
        }
        Ok(out)
    }

    pub fn dense_block(
        &mut self,
        mut x: NodeId,
        layers: usize,
        growth: usize,
        name: &str,
    ) -> Result<NodeId> {
        for l in 1..=layers {
            x = self.dense_layer(x, growth, &format!("{name}.layer{l}"))?;
        }
        Ok(x)
    }

    /// batchnorm → relu → 1×1 conv halving the channels → 2×2 average pool.
    pub fn transition(&mut self, x: NodeId, name: &str) -> Result<NodeId> {
        let c = self.shape(x).c;
        let bn = self.batchnorm(x, &format!("{name}.bn"));
        let r = self.relu(bn, &format!("{name}.relu"));
        let conv = self.conv(
            r,
            (c / 2).max(1),
            ConvSpec::new(1, 1, 0),
            false,
            &format!("{name}.conv"),
        )?;
        let s = self.shape(conv);
        if s.h < 2 || s.w < 2 {
            return Err(Error::InvalidArgument(format!(
                "{name}: spatial size {}x{} too small to pool",
                s.h, s.w
            )));
        }
        Ok(self.avg_pool(conv, &format!("{name}.pool")))
    }

    /// conv3×3(stride) → bn → relu → conv3×3 → bn; the shortcut is the raw
    /// input for identity blocks or a 1×1 strided conv → bn projection.
    fn residual_unit(
        &mut self,
        x: NodeId,
        width: usize,
        stride: usize,
        project: bool,
        name: &str,
    ) -> Result<NodeId> {
        let c1 = self.conv(
            x,
            width,
            ConvSpec::new(3, stride, 1),
            false,
            &format!("{name}.conv1"),
        )?;
        let b1 = self.batchnorm(c1, &format!("{name}.bn1"));
        let r1 = self.relu(b1, &format!("{name}.relu1"));
        let c2 = self.conv(
            r1,
            width,
            ConvSpec::same(3),
            false,
            &format!("{name}.conv2"),
        )?;
        let b2 = self.batchnorm(c2, &format!("{name}.bn2"));
        let shortcut = if project {
            let p = self.conv(
                x,
                width,
                ConvSpec::new(1, stride, 0),
                false,
                &format!("{name}.proj"),
            )?;
            self.batchnorm(p, &format!("{name}.proj_bn"))
        } else {
            x
        };
        let sum = self.add(b2, shortcut, &format!("{name}.add"))?;
        Ok(self.relu(sum, &format!("{name}.out")))
    }

    /// Residual block whose output shape equals its input shape.
    pub fn identity_block(&mut self, x: NodeId, name: &str) -> Result<NodeId> {
        let c = self.shape(x).c;
        self.residual_unit(x, c, 1, false, name)
    }

    /// Residual block with a projected shortcut; changes channels to `width`
    /// and divides the spatial extent by `stride`.
    pub fn conv_block(
        &mut self,
        x: NodeId,
        width: usize,
        stride: usize,
        name: &str,
    ) -> Result<NodeId> {
        let s = self.shape(x);
        if s.h < stride || s.w < stride {
            return Err(Error::InvalidArgument(format!(
                "{name}: spatial size {}x{} too small for stride {stride}",
                s.h, s.w
            )));
        }
        self.residual_unit(x, width, stride, true, name)
    }

    /// GAP → dropout → dense(classes) → softmax.
    pub fn classifier_head(&mut self, x: NodeId, dropout: f64, classes: usize) -> Result<NodeId> {
        let g = self.global_avg_pool(x, "head.gap");
        let d = self.dropout(g, dropout, "head.dropout")?;
        let fc = self.dense(d, classes, "head.dense");
        Ok(self.softmax(fc, "head.softmax"))
    }

    /// Finishes the graph; the last node added is the output.
    pub fn finish(self, spec: Option<ModelSpec>) -> ModelGraph<T> {
        ModelGraph {
            spec,
            nodes: self.nodes,
            params: self.params,
            bn_states: self.bn_states,
            tape: None,
        }
    }
}

fn check_counts(what: &str, counts: &[usize]) -> Result<()> {
    if counts.is_empty() || counts.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "{what}: all counts must be at least 1"
        )));
    }
    Ok(())
}

pub(super) fn build<T: Scalar>(spec: &ModelSpec) -> Result<ModelGraph<T>> {
    if spec.classes == 0 {
        return Err(Error::InvalidArgument("classes must be at least 1".into()));
    }
    let (c, h, w) = spec.input;
    let (mut b, x) = GraphBuilder::<T>::new(c, h, w)?;
    let features = match &spec.blocks {
        BlockSpec::Dense(d) => {
            check_counts("dense blocks", &d.layers_per_block)?;
            check_counts("dense block widths", &[d.stem_channels, d.growth_rate])?;
            let mut x = b.conv(x, d.stem_channels, ConvSpec::same(3), false, "stem.conv")?;
            let blocks = d.layers_per_block.len();
            for (i, &layers) in d.layers_per_block.iter().enumerate() {
                x = b.dense_block(x, layers, d.growth_rate, &format!("block{}", i + 1))?;
                if i + 1 < blocks {
                    x = b.transition(x, &format!("transition{}", i + 1))?;
                }
            }
            let bn = b.batchnorm(x, "final.bn");
            b.relu(bn, "final.relu")
        }
        BlockSpec::Residual(r) => {
            check_counts("residual stages", &r.blocks_per_stage)?;
            check_counts("residual widths", &r.stage_widths)?;
            check_counts("residual stem", &[r.stem_channels])?;
            if r.stage_widths.len() != r.blocks_per_stage.len() {
                return Err(Error::InvalidArgument(
                    "stage_widths and blocks_per_stage must have the same length".into(),
                ));
            }
            let stem = b.conv(x, r.stem_channels, ConvSpec::same(3), false, "stem.conv")?;
            let bn = b.batchnorm(stem, "stem.bn");
            let mut x = b.relu(bn, "stem.relu");
            for (s, (&width, &blocks)) in r.stage_widths.iter().zip(&r.blocks_per_stage).enumerate()
            {
                x = b.conv_block(x, width, 2, &format!("stage{}.block1", s + 1))?;
                for k in 2..=blocks {
                    x = b.identity_block(x, &format!("stage{}.block{k}", s + 1))?;
                }
            }
            x
        }
    };
    b.classifier_head(features, spec.dropout, spec.classes)?;
    Ok(b.finish(Some(spec.clone())))
}
