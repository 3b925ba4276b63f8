//! Text model configuration.
//!
//! ```text
//! # comment
//! name small-net
//! input 2 304 240          # C H W, or C L for one-dimensional inputs
//! timesteps 1
//! format q 8 8             # or: format weights q 8 8 / format potentials q 8 8
//! neuron lif tau=2 vth=1 leak=decay
//! 32c4x4s4p0
//! 64c3s2!@4                # `!` extraction point, `@4` NPUs for this layer
//! 16c1s1-                 # `-` drops the bias
//! fc10
//! avg2s2
//! ```
//!
//! `neuron` and `format` lines apply to every layer that follows them.
//! When `p` is omitted, an axis with a 3-tap kernel gets padding 1 and any
//! other kernel gets 0.

use std::fmt::Write as _;

use super::{Formats, LayerKind, LayerSpec, ModelError, NetworkSpec, Shape};
use crate::fixedpoint::FixedFormat;
use crate::neuron::{LeakForm, NeuronKind, NeuronParams};

struct Line<'a> {
    number: usize,
    text: &'a str,
}

impl Line<'_> {
    fn err(&self, token: &str, message: impl Into<String>) -> ModelError {
        ModelError::Syntax {
            line: self.number,
            column: self.column(token),
            message: message.into(),
        }
    }

    /// 1-based column of `token`, which must be a subslice of the line.
    fn column(&self, token: &str) -> usize {
        let offset = token.as_ptr() as usize - self.text.as_ptr() as usize;
        offset.min(self.text.len()) + 1
    }
}

/// Parses a configuration into a spec with zero-initialized weights.
pub fn parse_model_config(text: &str) -> Result<NetworkSpec, ModelError> {
    let mut name = String::from("network");
    let mut input: Option<(Shape, bool)> = None;
    let mut timesteps = 1usize;
    let mut formats = Formats::default();
    let mut default_formats: Option<Formats> = None;
    let mut neuron = NeuronParams::default();
    let mut layers = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = Line { number: idx + 1, text: raw };
        let content = raw.split('#').next().unwrap_or("").trim_end();
        let mut words = content.split_whitespace();
        let Some(head) = words.next() else { continue };
        let args: Vec<&str> = words.collect();
        match head {
            "name" => {
                let start = line.column(args.first().copied().unwrap_or(head)) - 1;
                name = content[start..].trim().to_string();
                if name.is_empty() || args.is_empty() {
                    return Err(line.err(head, "name needs a value"));
                }
            }
            "input" => {
                if !layers.is_empty() {
                    return Err(line.err(head, "input must precede layers"));
                }
                let dims = args
                    .iter()
                    .map(|a| parse_count(&line, a, "input dimension"))
                    .collect::<Result<Vec<_>, _>>()?;
                input = Some(match dims[..] {
                    [c, h, w] => (Shape::new(c, h, w), false),
                    [c, l] => (Shape::new(c, 1, l), true),
                    _ => return Err(line.err(head, "input takes `C H W` or `C L`")),
                });
            }
            "timesteps" => match args[..] {
                [n] => timesteps = parse_count(&line, n, "timesteps")?,
                _ => return Err(line.err(head, "timesteps takes one value")),
            },
            "format" => {
                let (role, rest) = match args.first() {
                    Some(&r @ ("weights" | "potentials")) => (Some(r), &args[1..]),
                    _ => (None, &args[..]),
                };
                let fmt = match rest {
                    ["q", m, n] => {
                        let m = parse_number::<u32>(&line, m)?;
                        let n = parse_number::<u32>(&line, n)?;
                        FixedFormat::new(m, n).map_err(|e| line.err(head, e.to_string()))?
                    }
                    _ => return Err(line.err(head, "format takes `[weights|potentials] q M N`")),
                };
                match role {
                    Some("weights") => formats.weights = fmt,
                    Some(_) => formats.potentials = fmt,
                    None => {
                        formats.weights = fmt;
                        formats.potentials = fmt;
                    }
                }
                if layers.is_empty() {
                    default_formats = Some(formats);
                }
            }
            "neuron" => neuron = parse_neuron(&line, head, &args)?,
            _ => {
                if !args.is_empty() {
                    return Err(line.err(args[0], "unexpected text after layer"));
                }
                let Some((_, one_d)) = input else {
                    return Err(line.err(head, "input must be declared before layers"));
                };
                let mut layer = parse_layer(&line, head, one_d)?;
                layer.neuron = neuron;
                layer.formats = formats;
                layers.push(layer);
            }
        }
    }

    let (input_shape, one_dimensional) = input.ok_or_else(|| ModelError::Syntax {
        line: text.lines().count().max(1),
        column: 1,
        message: "missing `input` line".into(),
    })?;
    if layers.is_empty() {
        return Err(ModelError::Syntax {
            line: text.lines().count().max(1),
            column: 1,
            message: "no layers".into(),
        });
    }
    let mut spec = NetworkSpec {
        name,
        input_shape,
        one_dimensional,
        timesteps,
        formats: default_formats.unwrap_or_default(),
        layers,
        weights: Vec::new(),
    };
    spec.reset_weights()?;
    Ok(spec)
}

fn parse_number<T: std::str::FromStr>(line: &Line<'_>, token: &str) -> Result<T, ModelError> {
    token
        .parse()
        .map_err(|_| line.err(token, format!("expected a number, got `{token}`")))
}

fn parse_count(line: &Line<'_>, token: &str, what: &'static str) -> Result<usize, ModelError> {
    let n: usize = parse_number(line, token)?;
    if n == 0 {
        return Err(ModelError::NonPositive { line: line.number, what });
    }
    Ok(n)
}

fn parse_neuron(line: &Line<'_>, head: &str, args: &[&str]) -> Result<NeuronParams, ModelError> {
    let kind = match args.first() {
        Some(&"if") => NeuronKind::If,
        Some(&"lif") | Some(&"plif") => NeuronKind::Lif,
        Some(other) => return Err(line.err(other, format!("unknown neuron model `{other}`"))),
        None => return Err(line.err(head, "neuron needs a model")),
    };
    let mut tau = None;
    let mut vth = None;
    let mut leak = LeakForm::DecayInput;
    for arg in &args[1..] {
        let Some((key, value)) = arg.split_once('=') else {
            return Err(line.err(arg, "expected key=value"));
        };
        match key {
            "tau" => tau = Some(parse_number::<f64>(line, value)?),
            "vth" => vth = Some(parse_number::<f64>(line, value)?),
            "leak" => {
                leak = match value {
                    "decay" => LeakForm::DecayInput,
                    "shift" => LeakForm::ShiftLeak,
                    _ => return Err(line.err(value, "leak must be `decay` or `shift`")),
                }
            }
            _ => return Err(line.err(arg, format!("unknown neuron key `{key}`"))),
        }
    }
    let vth = vth.ok_or_else(|| line.err(head, "neuron needs vth="))?;
    let params = match kind {
        NeuronKind::If => NeuronParams::integrate_and_fire(vth),
        NeuronKind::Lif => {
            NeuronParams::leaky(tau.ok_or_else(|| line.err(head, "lif needs tau="))?, vth, leak)
        }
    };
    params.validate().map_err(|e| line.err(head, e.to_string()))?;
    Ok(params)
}

/// Cursor over a layer token such as `128c3x3s2p1!@4`.
struct Scanner<'l, 't> {
    line: &'l Line<'t>,
    token: &'t str,
    pos: usize,
}

impl<'t> Scanner<'_, 't> {
    fn rest(&self) -> &'t str {
        &self.token[self.pos..]
    }

    fn eat(&mut self, c: char) -> bool {
        if self.rest().starts_with(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn err(&self, message: impl Into<String>) -> ModelError {
        self.line.err(self.rest(), message)
    }

    fn number(&mut self, what: &'static str) -> Result<usize, ModelError> {
        let digits = self.rest().bytes().take_while(u8::is_ascii_digit).count();
        if digits == 0 {
            return Err(self.err(format!("expected {what}")));
        }
        let n: usize = self.rest()[..digits]
            .parse()
            .map_err(|_| self.err(format!("{what} out of range")))?;
        self.pos += digits;
        if n == 0 {
            return Err(ModelError::NonPositive { line: self.line.number, what });
        }
        Ok(n)
    }

    /// `n` or `n x m`; a single value applies to both axes.
    fn pair(&mut self, what: &'static str, allow_zero: bool, one_d: bool) -> Result<(usize, usize), ModelError> {
        let first = if allow_zero { self.number_or_zero(what)? } else { self.number(what)? };
        if self.rest().starts_with('x') {
            if one_d {
                return Err(self.err("one-dimensional layers take a single value"));
            }
            self.pos += 1;
            let second = if allow_zero { self.number_or_zero(what)? } else { self.number(what)? };
            Ok((first, second))
        } else if one_d {
            Ok((if allow_zero { 0 } else { 1 }, first))
        } else {
            Ok((first, first))
        }
    }

    fn number_or_zero(&mut self, what: &'static str) -> Result<usize, ModelError> {
        if self.rest().starts_with('0') && !self.rest()[1..].starts_with(|c: char| c.is_ascii_digit()) {
            self.pos += 1;
            return Ok(0);
        }
        self.number(what)
    }
}

fn parse_layer(line: &Line<'_>, token: &str, one_d: bool) -> Result<LayerSpec, ModelError> {
    let mut sc = Scanner { line, token, pos: 0 };
    let alpha: usize = token.bytes().take_while(u8::is_ascii_alphabetic).count();
    let mut layer = match &token[..alpha] {
        "" => {
            let digits = token.bytes().take_while(u8::is_ascii_digit).count();
            if digits == 0 {
                return Err(line.err(token, format!("unknown layer `{token}`")));
            }
            let out = sc.number("output channels")?;
            if !sc.eat('c') {
                return Err(sc.err("expected `c` after the channel count"));
            }
            let kind = if one_d { LayerKind::Conv1d } else { LayerKind::Conv2d };
            let kernel = sc.pair("kernel size", false, one_d)?;
            if !sc.eat('s') {
                return Err(sc.err("expected `s<stride>`"));
            }
            let stride = sc.pair("stride", false, one_d)?;
            LayerSpec {
                kind,
                out_channels: out,
                kernel,
                stride,
                padding: default_padding(kernel),
                ..LayerSpec::conv2d(out, 1, 1, 0)
            }
        }
        "fc" => {
            sc.pos = 2;
            let out = sc.number("output channels")?;
            LayerSpec::fully_connected(out)
        }
        "avg" => {
            sc.pos = 3;
            let kernel = sc.pair("pool size", false, one_d)?;
            if !sc.eat('s') {
                return Err(sc.err("expected `s<stride>`"));
            }
            let stride = sc.pair("stride", false, one_d)?;
            LayerSpec {
                kernel,
                stride,
                padding: (0, 0),
                ..LayerSpec::avgpool(1, 1)
            }
        }
        other => {
            return Err(ModelError::UnknownLayerKind {
                line: line.number,
                column: line.column(token),
                token: other.to_string(),
            })
        }
    };
    if layer.kind != LayerKind::FullyConnected && sc.eat('p') {
        layer.padding = sc.pair("padding", true, one_d)?;
    }
    if layer.kind.has_weights() && sc.eat('-') {
        layer.has_bias = false;
    }
    if sc.eat('!') {
        layer.extract = true;
    }
    if sc.eat('@') {
        layer.npu_count = sc.number("npu count")?;
    }
    if !sc.rest().is_empty() {
        return Err(sc.err(format!("unexpected `{}`", sc.rest())));
    }
    Ok(layer)
}

fn default_padding(kernel: (usize, usize)) -> (usize, usize) {
    let pad = |k| if k == 3 { 1 } else { 0 };
    (if kernel.0 == 1 { 0 } else { pad(kernel.0) }, pad(kernel.1))
}

fn format_line(role: &str, fmt: FixedFormat) -> String {
    format!("format {role}q {} {}\n", fmt.integer_bits(), fmt.fraction_bits())
}

fn write_formats(out: &mut String, from: Option<Formats>, to: Formats) {
    match from {
        Some(f) if f == to => {}
        Some(f) if f.weights == to.weights => out.push_str(&format_line("potentials ", to.potentials)),
        Some(f) if f.potentials == to.potentials => out.push_str(&format_line("weights ", to.weights)),
        _ if to.weights == to.potentials => out.push_str(&format_line("", to.weights)),
        _ => {
            out.push_str(&format_line("weights ", to.weights));
            out.push_str(&format_line("potentials ", to.potentials));
        }
    }
}

fn pair_text(v: (usize, usize), one_d: bool) -> String {
    if one_d || v.0 == v.1 {
        v.1.to_string()
    } else {
        format!("{}x{}", v.0, v.1)
    }
}

/// Canonical configuration text; parsing it yields `spec` with zeroed weights.
pub fn to_config_text(spec: &NetworkSpec) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "name {}", spec.name);
    let s = spec.input_shape;
    if spec.one_dimensional {
        let _ = writeln!(out, "input {} {}", s.channels, s.width);
    } else {
        let _ = writeln!(out, "input {} {} {}", s.channels, s.height, s.width);
    }
    let _ = writeln!(out, "timesteps {}", spec.timesteps);
    write_formats(&mut out, None, spec.formats);
    let mut formats = spec.formats;
    let mut neuron: Option<NeuronParams> = None;
    for layer in &spec.layers {
        if layer.formats != formats {
            write_formats(&mut out, Some(formats), layer.formats);
            formats = layer.formats;
        }
        if neuron != Some(layer.neuron) {
            let _ = writeln!(out, "neuron {}", layer.neuron);
            neuron = Some(layer.neuron);
        }
        let one_d = spec.one_dimensional;
        match layer.kind {
            LayerKind::FullyConnected => {
                let _ = write!(out, "fc{}", layer.out_channels);
            }
            LayerKind::AvgPool => {
                let _ = write!(
                    out,
                    "avg{}s{}p{}",
                    pair_text(layer.kernel, one_d),
                    pair_text(layer.stride, one_d),
                    pair_text(layer.padding, one_d)
                );
            }
            LayerKind::Conv1d | LayerKind::Conv2d => {
                let _ = write!(
                    out,
                    "{}c{}s{}p{}",
                    layer.out_channels,
                    pair_text(layer.kernel, one_d),
                    pair_text(layer.stride, one_d),
                    pair_text(layer.padding, one_d)
                );
            }
        }
        if layer.kind.has_weights() && !layer.has_bias {
            out.push('-');
        }
        if layer.extract {
            out.push('!');
        }
        if layer.npu_count != 1 {
            let _ = write!(out, "@{}", layer.npu_count);
        }
        out.push('\n');
    }
    out
}
