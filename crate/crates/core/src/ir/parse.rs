//! Line-oriented parser for the architecture description format.
//!
//! One directive per line; `#` starts a comment and blank lines are
//! ignored. The first directive must be the `network` header. Channel
//! counts of convolutions are derived from the chain, so documents only
//! carry output channels.
//!
//! ```text
//! network <name> in_channels=<int>
//! conv k=<f>x<t> s=<f>x<t> [d=<f>x<t>] c=<out> [bn=off] [bias] [act=relu|linear]
//! pool max|avg k=<f>x<t> s=<f>x<t>
//! resblock [proj k=<f>x<t> s=<f>x<t>] {
//! denseblock growth=<int> {
//! }
//! gap
//! classifier classes=<int>
//! ```
//!
//! Flag defaults are `d=1x1`, batch norm on, bias off, `act=relu`. The bare
//! flags `bn` and `bias` switch the attribute on; `bn=off`/`bias=off` switch
//! it off explicitly (the canonical form writes `bn=off` and `bias`, and
//! omits every default).

use super::{
    validate_network, Activation, ConvSpec, Diagnostic, LayerSpec, NetworkSpec, PoolKind,
    PoolSpec, Shortcut,
};
use crate::axis::Axis2;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    /// The document does not match the grammar.
    #[error("syntax error at line {line}, column {col}: {message}")]
    Syntax { line: usize, col: usize, message: String },
    /// The document parsed but violates a network invariant.
    #[error("semantic error: {}", fmt_semantic(.diagnostics))]
    Semantic { diagnostics: Vec<Diagnostic> },
}

fn fmt_semantic(diags: &[Diagnostic]) -> String {
    diags.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; ")
}

struct Token<'a> {
    text: &'a str,
    col: usize, // 1-based column of the token start
}

fn tokenize(line: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices() {
        if ch == '#' {
            break;
        }
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                out.push(Token { text: &line[s..i], col: s + 1 });
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        let end = line.find('#').unwrap_or(line.len());
        out.push(Token { text: line[s..end].trim_end(), col: s + 1 });
    }
    out
}

struct LineParser<'a> {
    line_no: usize,
    tokens: Vec<Token<'a>>,
    pos: usize,
}

impl<'a> LineParser<'a> {
    fn err(&self, col: usize, message: impl Into<String>) -> ParseError {
        ParseError::Syntax { line: self.line_no, col, message: message.into() }
    }

    fn end_col(&self) -> usize {
        self.tokens.last().map(|t| t.col + t.text.len()).unwrap_or(1)
    }

    fn peek(&self) -> Option<&Token<'a>> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self, expected: &str) -> Result<&Token<'a>, ParseError> {
        let col = self.end_col();
        match self.tokens.get(self.pos) {
            Some(_) => {
                self.pos += 1;
                Ok(&self.tokens[self.pos - 1])
            }
            None => Err(self.err(col, format!("expected {expected}"))),
        }
    }

    fn expect_end(&self) -> Result<(), ParseError> {
        if let Some(tok) = self.tokens.get(self.pos) {
            Err(self.err(tok.col, format!("unexpected token {:?}", tok.text)))
        } else {
            Ok(())
        }
    }

    /// Consumes `key=<f>x<t>`.
    fn axis_arg(&mut self, key: &str) -> Result<Axis2, ParseError> {
        let tok = self.next(&format!("{key}=<f>x<t>"))?;
        let col = tok.col;
        let text = tok.text;
        let value = text
            .strip_prefix(key)
            .and_then(|r| r.strip_prefix('='))
            .ok_or_else(|| self.err(col, format!("expected {key}=<f>x<t>, found {text:?}")))?;
        value
            .parse::<Axis2>()
            .map_err(|_| self.err(col, format!("expected {key}=<f>x<t>, found {text:?}")))
    }

    /// Consumes `key=<int>`.
    fn int_arg(&mut self, key: &str) -> Result<u32, ParseError> {
        let tok = self.next(&format!("{key}=<int>"))?;
        let col = tok.col;
        let text = tok.text;
        let value = text
            .strip_prefix(key)
            .and_then(|r| r.strip_prefix('='))
            .ok_or_else(|| self.err(col, format!("expected {key}=<int>, found {text:?}")))?;
        value
            .parse::<u32>()
            .map_err(|_| self.err(col, format!("expected {key}=<int>, found {text:?}")))
    }
}

/// Channel-flow bookkeeping while layers are collected.
enum BlockCtx {
    None,
    Residual,
    Dense { entering: u32, growth: u32, layers: u32 },
}

/// Parses an architecture document into a validated [`NetworkSpec`].
///
/// Syntax errors carry the line and column of the offending token;
/// semantic errors carry validation diagnostics annotated with source
/// lines.
pub fn parse_network(text: &str) -> Result<NetworkSpec, ParseError> {
    let mut name = None;
    let mut input_channels = 0u32;
    let mut layers: Vec<LayerSpec> = Vec::new();
    let mut layer_lines: Vec<usize> = Vec::new();
    let mut channels = 0u32;
    let mut block = BlockCtx::None;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let tokens = tokenize(raw);
        if tokens.is_empty() {
            continue;
        }
        let mut p = LineParser { line_no, tokens, pos: 0 };
        let head = p.next("a directive")?;
        let head_col = head.col;
        let head_text = head.text;

        if name.is_none() {
            if head_text != "network" {
                return Err(p.err(head_col, format!("expected network header first, found {head_text:?}")));
            }
            let n = p.next("<name>")?;
            let n = n.text.to_string();
            let ic = p.int_arg("in_channels")?;
            p.expect_end()?;
            name = Some(n);
            input_channels = ic;
            channels = ic;
            continue;
        }

        let layer = match head_text {
            "network" => {
                return Err(p.err(head_col, "duplicate network header"));
            }
            "conv" => {
                let kernel = p.axis_arg("k")?;
                let stride = p.axis_arg("s")?;
                let mut dilation = Axis2::ONE;
                let mut out_channels = None;
                let mut has_batchnorm = true;
                let mut has_bias = false;
                let mut activation = Activation::Relu;
                while let Some(tok) = p.peek() {
                    let col = tok.col;
                    let text = tok.text;
                    if text.starts_with("d=") {
                        dilation = p.axis_arg("d")?;
                    } else if text.starts_with("c=") {
                        out_channels = Some(p.int_arg("c")?);
                    } else if text == "bn" || text == "bn=on" {
                        has_batchnorm = true;
                        p.pos += 1;
                    } else if text == "bn=off" {
                        has_batchnorm = false;
                        p.pos += 1;
                    } else if text == "bias" || text == "bias=on" {
                        has_bias = true;
                        p.pos += 1;
                    } else if text == "bias=off" {
                        has_bias = false;
                        p.pos += 1;
                    } else if text == "act=relu" {
                        activation = Activation::Relu;
                        p.pos += 1;
                    } else if text == "act=linear" {
                        activation = Activation::Linear;
                        p.pos += 1;
                    } else {
                        return Err(p.err(col, format!("expected one of d=, c=, bn, bias, act=, found {text:?}")));
                    }
                }
                let out_channels = out_channels
                    .ok_or_else(|| p.err(p.end_col(), "expected c=<out>"))?;
                let in_channels = match &mut block {
                    BlockCtx::Dense { entering, growth, layers } => {
                        let ic = entering.saturating_add(layers.saturating_mul(*growth));
                        *layers += 1;
                        ic
                    }
                    _ => channels,
                };
                channels = out_channels;
                LayerSpec::Conv(ConvSpec {
                    kernel,
                    stride,
                    dilation,
                    in_channels,
                    out_channels,
                    has_batchnorm,
                    has_bias,
                    activation,
                })
            }
            "pool" => {
                let kind_tok = p.next("max or avg")?;
                let kind = match kind_tok.text {
                    "max" => PoolKind::Max,
                    "avg" => PoolKind::Average,
                    other => {
                        let col = kind_tok.col;
                        return Err(p.err(col, format!("expected max or avg, found {other:?}")));
                    }
                };
                let kernel = p.axis_arg("k")?;
                let stride = p.axis_arg("s")?;
                p.expect_end()?;
                LayerSpec::Pool(PoolSpec { kind, kernel, stride })
            }
            "resblock" => {
                let shortcut = match p.peek().map(|t| t.text) {
                    Some("proj") => {
                        p.pos += 1;
                        let kernel = p.axis_arg("k")?;
                        let stride = p.axis_arg("s")?;
                        Shortcut::Projection { kernel, stride }
                    }
                    _ => Shortcut::Identity,
                };
                let brace = p.next("{")?;
                if brace.text != "{" {
                    let (col, text) = (brace.col, brace.text.to_string());
                    return Err(p.err(col, format!("expected {{, found {text:?}")));
                }
                p.expect_end()?;
                block = BlockCtx::Residual;
                LayerSpec::ResidualBlockStart { shortcut }
            }
            "denseblock" => {
                let growth = p.int_arg("growth")?;
                let brace = p.next("{")?;
                if brace.text != "{" {
                    let (col, text) = (brace.col, brace.text.to_string());
                    return Err(p.err(col, format!("expected {{, found {text:?}")));
                }
                p.expect_end()?;
                block = BlockCtx::Dense { entering: channels, growth, layers: 0 };
                LayerSpec::DenseBlockStart { growth_rate: growth }
            }
            "}" => {
                p.expect_end()?;
                let layer = match block {
                    BlockCtx::Residual => LayerSpec::ResidualBlockEnd,
                    BlockCtx::Dense { growth, layers, .. } => {
                        channels = layers.saturating_mul(growth);
                        LayerSpec::DenseBlockEnd
                    }
                    // Let validation report the unbalanced marker with a
                    // layer index; a residual end is as good a guess as any.
                    BlockCtx::None => LayerSpec::ResidualBlockEnd,
                };
                block = BlockCtx::None;
                layer
            }
            "gap" => {
                p.expect_end()?;
                LayerSpec::GlobalAveragePool
            }
            "classifier" => {
                let classes = p.int_arg("classes")?;
                p.expect_end()?;
                LayerSpec::Classifier { classes }
            }
            other => {
                return Err(p.err(head_col, format!("expected a directive (conv, pool, resblock, denseblock, }}, gap, classifier), found {other:?}")));
            }
        };
        layers.push(layer);
        layer_lines.push(line_no);
    }

    let Some(name) = name else {
        return Err(ParseError::Syntax { line: 1, col: 1, message: "expected network header".into() });
    };

    let net = NetworkSpec { name, input_channels, layers };
    let mut diagnostics = validate_network(&net);
    if diagnostics.is_empty() {
        Ok(net)
    } else {
        for d in &mut diagnostics {
            if let Some(line) = layer_lines.get(d.layer_index) {
                d.message = format!("{} (line {line})", d.message);
            }
        }
        Err(ParseError::Semantic { diagnostics })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_conv_document() {
        let net = parse_network("network t in_channels=8\nconv k=1x1 s=1x1 c=8\n").unwrap();
        assert_eq!(net.input_channels, 8);
        assert_eq!(net.layers.len(), 1);
        let conv = net.layers[0].as_conv().unwrap();
        assert_eq!(conv.kernel, Axis2::ONE);
        assert_eq!(conv.in_channels, 8);
        assert_eq!(conv.out_channels, 8);
        assert!(conv.has_batchnorm);
        assert!(!conv.has_bias);
        assert_eq!(conv.activation, Activation::Relu);
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let net = parse_network(
            "# header comment\n\nnetwork t in_channels=1\nconv k=3x3 s=1x1 c=4 # trailing\n",
        )
        .unwrap();
        assert_eq!(net.layers.len(), 1);
    }

    #[test]
    fn syntax_error_reports_position() {
        let err = parse_network("network t in_channels=1\nconv k=3x3 s=1x1 c=oops\n").unwrap_err();
        match err {
            ParseError::Syntax { line, col, message } => {
                assert_eq!(line, 2);
                assert_eq!(col, 18);
                assert!(message.contains("c=<int>"), "{message}");
            }
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn unterminated_block_is_a_semantic_error() {
        let err = parse_network(
            "network t in_channels=1\nconv k=3x3 s=1x1 c=4\nresblock {\nconv k=3x3 s=1x1 c=4\n",
        )
        .unwrap_err();
        match err {
            ParseError::Semantic { diagnostics } => {
                assert!(diagnostics.iter().any(|d| d.message.contains("unbalanced block")));
                assert!(diagnostics[0].message.contains("line 3"));
            }
            other => panic!("expected semantic error, got {other:?}"),
        }
    }

    #[test]
    fn dense_block_channels_chain_by_growth() {
        let net = parse_network(
            "network t in_channels=4\ndenseblock growth=2 {\nconv k=3x3 s=1x1 c=2\nconv k=3x3 s=1x1 c=2\n}\nconv k=1x1 s=1x1 c=3\n",
        )
        .unwrap();
        let second = net.layers[2].as_conv().unwrap();
        assert_eq!(second.in_channels, 6); // 4 entering + 1*growth
        let after = net.layers[4].as_conv().unwrap();
        assert_eq!(after.in_channels, 4); // 2 layers * growth 2
    }

    #[test]
    fn missing_header_is_rejected() {
        let err = parse_network("conv k=1x1 s=1x1 c=8\n").unwrap_err();
        assert!(matches!(err, ParseError::Syntax { line: 1, .. }));
    }

    #[test]
    fn flags_parse_in_any_order() {
        let net = parse_network(
            "network t in_channels=1\nconv k=3x3 s=2x1 bias d=2x2 c=4 act=linear bn=off\n",
        )
        .unwrap();
        let c = net.layers[0].as_conv().unwrap();
        assert_eq!(c.dilation, Axis2::splat(2));
        assert_eq!(c.stride, Axis2::new(2, 1));
        assert!(c.has_bias);
        assert!(!c.has_batchnorm);
        assert_eq!(c.activation, Activation::Linear);
    }
}
