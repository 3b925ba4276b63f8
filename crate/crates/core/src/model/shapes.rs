use super::{LayerKind, LayerSpec, ModelError, NetworkSpec, Shape};

/// Resolved convolution arithmetic of one layer.
///
/// Every layer kind lowers to a 2-D convolution: 1-D layers use a unit
/// height, fully connected layers a kernel spanning the whole input, and
/// average pooling a per-channel (diagonal) kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub input: Shape,
    pub output: Shape,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    /// Output channel `o` only reads input channel `o`.
    pub diagonal: bool,
}

fn out_dim(input: usize, pad: usize, kernel: usize, stride: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    (padded >= kernel).then(|| (padded - kernel) / stride + 1)
}

impl ConvGeometry {
    pub fn new(layer: &LayerSpec, input: Shape) -> Result<Self, String> {
        let (kernel, stride, padding, out_channels, diagonal) = match layer.kind {
            LayerKind::FullyConnected => ((input.height, input.width), (1, 1), (0, 0), layer.out_channels, false),
            LayerKind::AvgPool => (layer.kernel, layer.stride, layer.padding, input.channels, true),
            LayerKind::Conv1d if input.height != 1 => {
                return Err(format!("conv1d needs a one-dimensional input, got {input}"))
            }
            LayerKind::Conv1d | LayerKind::Conv2d => {
                (layer.kernel, layer.stride, layer.padding, layer.out_channels, false)
            }
        };
        if out_channels == 0 {
            return Err("non-positive output channels".into());
        }
        if kernel.0 == 0 || kernel.1 == 0 || stride.0 == 0 || stride.1 == 0 {
            return Err("kernel and stride must be >= 1".into());
        }
        let height = out_dim(input.height, padding.0, kernel.0, stride.0);
        let width = out_dim(input.width, padding.1, kernel.1, stride.1);
        match (height, width) {
            (Some(height), Some(width)) => Ok(ConvGeometry {
                input,
                output: Shape::new(out_channels, height, width),
                kernel,
                stride,
                padding,
                diagonal,
            }),
            _ => Err(format!(
                "kernel {}x{} does not fit input {input} with padding {:?}",
                kernel.0, kernel.1, padding
            )),
        }
    }

    pub fn kernel_area(&self) -> usize {
        self.kernel.0 * self.kernel.1
    }

    /// Inputs feeding one output neuron.
    pub fn fan_in(&self) -> usize {
        if self.diagonal {
            self.kernel_area()
        } else {
            self.input.channels * self.kernel_area()
        }
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        vec![self.output.channels, self.input.channels, self.kernel.0, self.kernel.1]
    }

    #[inline]
    pub fn weight_index(&self, o: usize, c: usize, ky: usize, kx: usize) -> usize {
        ((o * self.input.channels + c) * self.kernel.0 + ky) * self.kernel.1 + kx
    }

    /// Output positions along one axis whose window covers input position `i`,
    /// as `(out_pos, kernel_tap)` pairs in increasing output order.
    fn axis_targets(i: usize, pad: usize, kernel: usize, stride: usize, out_len: usize) -> impl Iterator<Item = (usize, usize)> {
        (0..kernel).rev().filter_map(move |k| {
            let num = (i + pad).checked_sub(k)?;
            (num % stride == 0 && num / stride < out_len).then(|| (num / stride, k))
        })
    }

    /// Output positions `(oy, ox, ky, kx)` touched by an input spike at `(y, x)`,
    /// clipped to the output bounds, in raster order.
    pub fn scatter_targets(&self, y: usize, x: usize) -> impl Iterator<Item = (usize, usize, usize, usize)> + '_ {
        let ys: Vec<_> = Self::axis_targets(y, self.padding.0, self.kernel.0, self.stride.0, self.output.height).collect();
        ys.into_iter().flat_map(move |(oy, ky)| {
            Self::axis_targets(x, self.padding.1, self.kernel.1, self.stride.1, self.output.width)
                .map(move |(ox, kx)| (oy, ox, ky, kx))
        })
    }

    /// Membrane updates caused by one input spike at `(y, x)`.
    pub fn overlap_count(&self, y: usize, x: usize) -> usize {
        let ny = Self::axis_targets(y, self.padding.0, self.kernel.0, self.stride.0, self.output.height).count();
        let nx = Self::axis_targets(x, self.padding.1, self.kernel.1, self.stride.1, self.output.width).count();
        let per_position = if self.diagonal { 1 } else { self.output.channels };
        ny * nx * per_position
    }
}

/// Output shape of every layer, in order.
pub fn infer_shapes(spec: &NetworkSpec) -> Result<Vec<Shape>, ModelError> {
    Ok(spec.geometries()?.into_iter().map(|g| g.output).collect())
}
