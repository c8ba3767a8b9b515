//! Symbolic layer graphs used for cost accounting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    /// External tensor (image or a feature map from another graph).
    Input,
    Conv,
    /// Transposed convolution.
    Deconv,
    Fc,
    Pool,
    Bilinear,
    Add,
    Concat,
    Bn,
    Relu,
    Softmax,
    /// Batched matrix product; `c_in` is the contraction length and the
    /// output is `c_out x out_h x out_w`.
    Matmul,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    /// Indices of producer layers, all earlier in the graph.
    pub inputs: Vec<usize>,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub bias: bool,
}

impl LayerSpec {
    fn plain(
        name: String,
        kind: LayerKind,
        inputs: Vec<usize>,
        c_in: usize,
        c_out: usize,
        in_hw: (usize, usize),
        out_hw: (usize, usize),
    ) -> Self {
        LayerSpec {
            name,
            kind,
            inputs,
            c_in,
            c_out,
            kernel: (1, 1),
            stride: 1,
            padding: 0,
            dilation: 1,
            groups: 1,
            in_h: in_hw.0,
            in_w: in_hw.1,
            out_h: out_hw.0,
            out_w: out_hw.1,
            bias: false,
        }
    }

    pub fn out_elems(&self) -> u64 {
        self.c_out as u64 * self.out_h as u64 * self.out_w as u64
    }
}

fn conv_out(input: usize, k: usize, stride: usize, padding: usize, dilation: usize) -> Option<usize> {
    let span = dilation * (k.checked_sub(1)?) + 1;
    let padded = input + 2 * padding;
    if stride == 0 || padded < span {
        return None;
    }
    Some((padded - span) / stride + 1)
}

fn deconv_out(input: usize, k: usize, stride: usize, padding: usize, dilation: usize) -> Option<usize> {
    ((input - 1) * stride + dilation * (k.checked_sub(1)?) + 1).checked_sub(2 * padding)
}

/// Ordered list of layers; serializes as a JSON array of layer records.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ArchGraph {
    pub layers: Vec<LayerSpec>,
}

impl ArchGraph {
    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn last(&self) -> Option<&LayerSpec> {
        self.layers.last()
    }

    pub fn find(&self, name: &str) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn count_kind(&self, kind: LayerKind) -> usize {
        self.layers.iter().filter(|l| l.kind == kind).count()
    }

    /// Appends `other`, shifting its internal input indices. Input layers of
    /// `other` stay in place as placeholders.
    pub fn append(&mut self, other: &ArchGraph) {
        let off = self.layers.len();
        for l in &other.layers {
            let mut l = l.clone();
            for i in &mut l.inputs {
                *i += off;
            }
            self.layers.push(l);
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<ArchGraph> {
        Ok(serde_json::from_str(s)?)
    }

    /// Checks every layer against its producers.
    pub fn validate(&self) -> Result<()> {
        for (idx, l) in self.layers.iter().enumerate() {
            let fail = |msg: String| Err(Error::Validation(format!("layer {idx} ({}): {msg}", l.name)));
            if let Some(&bad) = l.inputs.iter().find(|&&i| i >= idx) {
                return fail(format!("input {bad} does not precede the layer"));
            }
            if l.c_out == 0 || l.out_h == 0 || l.out_w == 0 {
                return fail("empty output".into());
            }
            let ins: Vec<&LayerSpec> = l.inputs.iter().map(|&i| &self.layers[i]).collect();
            let arity = |n: usize| -> Result<()> {
                if ins.len() != n {
                    return Err(Error::Validation(format!(
                        "layer {idx} ({}): expected {n} inputs, got {}",
                        l.name,
                        ins.len()
                    )));
                }
                Ok(())
            };
            let same_in = |p: &LayerSpec| p.c_out == l.c_in && p.out_h == l.in_h && p.out_w == l.in_w;
            match l.kind {
                LayerKind::Input => arity(0)?,
                LayerKind::Conv | LayerKind::Pool | LayerKind::Deconv => {
                    arity(1)?;
                    if !same_in(ins[0]) {
                        return fail("input shape does not match producer".into());
                    }
                    if l.groups == 0 || l.c_in % l.groups != 0 || l.c_out % l.groups != 0 {
                        return fail(format!("groups {} do not divide channels", l.groups));
                    }
                    if l.kind == LayerKind::Pool && l.c_in != l.c_out {
                        return fail("pooling changes channel count".into());
                    }
                    let f = if l.kind == LayerKind::Deconv { deconv_out } else { conv_out };
                    let oh = f(l.in_h, l.kernel.0, l.stride, l.padding, l.dilation);
                    let ow = f(l.in_w, l.kernel.1, l.stride, l.padding, l.dilation);
                    if oh != Some(l.out_h) || ow != Some(l.out_w) {
                        return fail(format!(
                            "output {}x{} inconsistent with input {}x{}, kernel {:?}, stride {}, padding {}, dilation {}",
                            l.out_h, l.out_w, l.in_h, l.in_w, l.kernel, l.stride, l.padding, l.dilation
                        ));
                    }
                }
                LayerKind::Fc => {
                    arity(1)?;
                    let p = ins[0];
                    if p.c_out * p.out_h * p.out_w != l.c_in || l.out_h != 1 || l.out_w != 1 {
                        return fail("fully connected layer shape mismatch".into());
                    }
                }
                LayerKind::Bilinear => {
                    arity(1)?;
                    if !same_in(ins[0]) || l.c_in != l.c_out {
                        return fail("resize shape mismatch".into());
                    }
                }
                LayerKind::Bn | LayerKind::Relu | LayerKind::Softmax => {
                    arity(1)?;
                    if !same_in(ins[0]) || l.c_in != l.c_out || l.in_h != l.out_h || l.in_w != l.out_w {
                        return fail("elementwise layer changes shape".into());
                    }
                }
                LayerKind::Add => {
                    if ins.len() < 2 {
                        return fail("add needs at least two inputs".into());
                    }
                    for p in &ins {
                        let spatial_ok = (p.out_h == l.out_h && p.out_w == l.out_w) || (p.out_h == 1 && p.out_w == 1);
                        if p.c_out != l.c_out || !spatial_ok {
                            return fail(format!("operand {} does not broadcast", p.name));
                        }
                    }
                }
                LayerKind::Concat => {
                    if ins.is_empty() {
                        return fail("concat needs inputs".into());
                    }
                    if ins.iter().any(|p| p.out_h != l.out_h || p.out_w != l.out_w) {
                        return fail("concat operands differ spatially".into());
                    }
                    let total: usize = ins.iter().map(|p| p.c_out).sum();
                    if total != l.c_out || l.c_in != l.c_out {
                        return fail(format!("concat channels {total} != {}", l.c_out));
                    }
                }
                LayerKind::Matmul => {
                    arity(2)?;
                    if l.c_in == 0 {
                        return fail("empty contraction".into());
                    }
                }
            }
        }
        Ok(())
    }
}

/// Incremental graph construction; each method returns the new layer's index.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    graph: ArchGraph,
    prefix: String,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_prefix(&mut self, prefix: impl Into<String>) {
        self.prefix = prefix.into();
    }

    fn name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn layer(&self, idx: usize) -> &LayerSpec {
        &self.graph.layers[idx]
    }

    fn push(&mut self, l: LayerSpec) -> usize {
        self.graph.layers.push(l);
        self.graph.layers.len() - 1
    }

    pub fn input(&mut self, name: &str, c: usize, h: usize, w: usize) -> usize {
        let l = LayerSpec::plain(self.name(name), LayerKind::Input, vec![], c, c, (h, w), (h, w));
        self.push(l)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        &mut self,
        name: &str,
        from: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        padding: usize,
        dilation: usize,
        bias: bool,
    ) -> usize {
        let p = self.layer(from).clone();
        let oh = conv_out(p.out_h, k, stride, padding, dilation).unwrap_or(0);
        let ow = conv_out(p.out_w, k, stride, padding, dilation).unwrap_or(0);
        let mut l = LayerSpec::plain(
            self.name(name),
            LayerKind::Conv,
            vec![from],
            p.c_out,
            c_out,
            (p.out_h, p.out_w),
            (oh, ow),
        );
        l.kernel = (k, k);
        l.stride = stride;
        l.padding = padding;
        l.dilation = dilation;
        l.bias = bias;
        self.push(l)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn deconv(
        &mut self,
        name: &str,
        from: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> usize {
        let p = self.layer(from).clone();
        let oh = deconv_out(p.out_h, k, stride, padding, 1).unwrap_or(0);
        let ow = deconv_out(p.out_w, k, stride, padding, 1).unwrap_or(0);
        let mut l = LayerSpec::plain(
            self.name(name),
            LayerKind::Deconv,
            vec![from],
            p.c_out,
            c_out,
            (p.out_h, p.out_w),
            (oh, ow),
        );
        l.kernel = (k, k);
        l.stride = stride;
        l.padding = padding;
        l.bias = bias;
        self.push(l)
    }

    pub fn fc(&mut self, name: &str, from: usize, c_out: usize) -> usize {
        let p = self.layer(from).clone();
        let mut l = LayerSpec::plain(
            self.name(name),
            LayerKind::Fc,
            vec![from],
            p.c_out * p.out_h * p.out_w,
            c_out,
            (p.out_h, p.out_w),
            (1, 1),
        );
        l.bias = true;
        self.push(l)
    }

    pub fn pool(&mut self, name: &str, from: usize, k: usize, stride: usize, padding: usize) -> usize {
        let p = self.layer(from).clone();
        let oh = conv_out(p.out_h, k, stride, padding, 1).unwrap_or(0);
        let ow = conv_out(p.out_w, k, stride, padding, 1).unwrap_or(0);
        let mut l = LayerSpec::plain(
            self.name(name),
            LayerKind::Pool,
            vec![from],
            p.c_out,
            p.c_out,
            (p.out_h, p.out_w),
            (oh, ow),
        );
        l.kernel = (k, k);
        l.stride = stride;
        l.padding = padding;
        self.push(l)
    }

    /// Whole-map average pooling to 1x1.
    pub fn global_pool(&mut self, name: &str, from: usize) -> usize {
        let p = self.layer(from).clone();
        let mut l = LayerSpec::plain(
            self.name(name),
            LayerKind::Pool,
            vec![from],
            p.c_out,
            p.c_out,
            (p.out_h, p.out_w),
            (1, 1),
        );
        l.kernel = (p.out_h, p.out_w);
        l.stride = p.out_h.max(p.out_w);
        self.push(l)
    }

    pub fn bilinear(&mut self, name: &str, from: usize, out_h: usize, out_w: usize) -> usize {
        let p = self.layer(from).clone();
        let l = LayerSpec::plain(
            self.name(name),
            LayerKind::Bilinear,
            vec![from],
            p.c_out,
            p.c_out,
            (p.out_h, p.out_w),
            (out_h, out_w),
        );
        self.push(l)
    }

    fn unary(&mut self, name: &str, kind: LayerKind, from: usize) -> usize {
        let p = self.layer(from).clone();
        let l = LayerSpec::plain(
            self.name(name),
            kind,
            vec![from],
            p.c_out,
            p.c_out,
            (p.out_h, p.out_w),
            (p.out_h, p.out_w),
        );
        self.push(l)
    }

    pub fn bn(&mut self, name: &str, from: usize) -> usize {
        self.unary(name, LayerKind::Bn, from)
    }

    pub fn relu(&mut self, name: &str, from: usize) -> usize {
        self.unary(name, LayerKind::Relu, from)
    }

    pub fn softmax(&mut self, name: &str, from: usize) -> usize {
        self.unary(name, LayerKind::Softmax, from)
    }

    /// Conv followed by BN and ReLU; returns the ReLU index.
    #[allow(clippy::too_many_arguments)]
    pub fn conv_bn_relu(
        &mut self,
        name: &str,
        from: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        padding: usize,
        dilation: usize,
    ) -> usize {
        let c = self.conv(name, from, c_out, k, stride, padding, dilation, false);
        let b = self.bn(&format!("{name}.bn"), c);
        self.relu(&format!("{name}.relu"), b)
    }

    /// Elementwise sum; 1x1 operands broadcast over the first operand's size.
    pub fn add(&mut self, name: &str, from: &[usize]) -> usize {
        let p = self.layer(from[0]).clone();
        let l = LayerSpec::plain(
            self.name(name),
            LayerKind::Add,
            from.to_vec(),
            p.c_out,
            p.c_out,
            (p.out_h, p.out_w),
            (p.out_h, p.out_w),
        );
        self.push(l)
    }

    pub fn concat(&mut self, name: &str, from: &[usize]) -> usize {
        let p = self.layer(from[0]).clone();
        let c: usize = from.iter().map(|&i| self.layer(i).c_out).sum();
        let l = LayerSpec::plain(
            self.name(name),
            LayerKind::Concat,
            from.to_vec(),
            c,
            c,
            (p.out_h, p.out_w),
            (p.out_h, p.out_w),
        );
        self.push(l)
    }

    /// Matrix product with contraction length `k` and output `c_out x h x w`.
    #[allow(clippy::too_many_arguments)]
    pub fn matmul(&mut self, name: &str, lhs: usize, rhs: usize, k: usize, c_out: usize, h: usize, w: usize) -> usize {
        let p = self.layer(lhs).clone();
        let l = LayerSpec::plain(
            self.name(name),
            LayerKind::Matmul,
            vec![lhs, rhs],
            k,
            c_out,
            (p.out_h, p.out_w),
            (h, w),
        );
        self.push(l)
    }

    pub fn finish(self) -> ArchGraph {
        self.graph
    }
}
