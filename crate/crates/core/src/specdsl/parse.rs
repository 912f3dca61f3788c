use std::ops::Range;

use toml::de::{DeTable, DeValue};
use toml::Spanned;

use super::{CandidateSpec, ParseDiagnostic, ParsedCandidate, SCHEMA_VERSION};
use crate::features::{parse_term, FeatureError, FeatureLibrarySpec, LibraryPart, TermExpr};
use crate::sparse_opt::{OptimizerRegistry, OptimizerSpec, Sr3, Stlsq};

/// Builds and compiles the library, dropping (with a warning) each custom
/// term whose name repeats another feature. Any other repeat stays an error.
fn library_without_repeats(
    ctx: &mut Ctx,
    mut parts: Vec<LibraryPart>,
    n: usize,
) -> Result<FeatureLibrarySpec, FeatureError> {
    loop {
        let lib = FeatureLibrarySpec::new(parts.clone())?;
        let name = match lib.compile(n) {
            Ok(_) => return Ok(lib),
            Err(FeatureError::DuplicateName(name)) => name,
            Err(e) => return Err(e),
        };
        let at = parts.iter().enumerate().rev().find_map(|(i, p)| match p {
            LibraryPart::Custom { terms } => terms.iter().rposition(|t| t.source == name).map(|j| (i, j)),
            _ => None,
        });
        let Some((i, j)) = at else {
            return Err(FeatureError::DuplicateName(name));
        };
        if let LibraryPart::Custom { terms } = &mut parts[i] {
            terms.remove(j);
            if terms.is_empty() {
                parts.remove(i);
            }
        }
        ctx.warn(0..0, format!("custom term {name:?} repeats an existing feature and was dropped"));
    }
}

/// Largest block accepted, in bytes.
pub const MAX_BLOCK_LENGTH: usize = 64 * 1024;

struct Ctx<'s> {
    source: &'s str,
    diags: Vec<ParseDiagnostic>,
}

impl Ctx<'_> {
    fn error(&mut self, span: Range<usize>, message: impl Into<String>) {
        let d = ParseDiagnostic::error(message).at(self.source, span.start);
        self.diags.push(d);
    }

    fn warn(&mut self, span: Range<usize>, message: impl Into<String>) {
        let d = ParseDiagnostic::warning(message).at(self.source, span.start);
        self.diags.push(d);
    }

    fn has_errors(&self) -> bool {
        self.diags.iter().any(|d| d.is_error())
    }
}

type Table<'i> = DeTable<'i>;

fn get<'a, 'i>(t: &'a Table<'i>, key: &str) -> Option<&'a Spanned<DeValue<'i>>> {
    t.iter().find(|(k, _)| k.get_ref().as_ref() == key).map(|(_, v)| v)
}

fn type_name(v: &DeValue<'_>) -> &'static str {
    v.type_str()
}

fn as_string(ctx: &mut Ctx, key: &str, v: &Spanned<DeValue>) -> Option<String> {
    match v.get_ref() {
        DeValue::String(s) => Some(s.to_string()),
        other => {
            ctx.error(v.span(), format!("{key} must be a string, got {}", type_name(other)));
            None
        }
    }
}

fn as_bool(ctx: &mut Ctx, key: &str, v: &Spanned<DeValue>) -> Option<bool> {
    match v.get_ref() {
        DeValue::Boolean(b) => Some(*b),
        other => {
            ctx.error(v.span(), format!("{key} must be true or false, got {}", type_name(other)));
            None
        }
    }
}

fn as_count(ctx: &mut Ctx, key: &str, v: &Spanned<DeValue>) -> Option<u64> {
    match v.get_ref() {
        DeValue::Integer(i) => match u64::from_str_radix(i.as_str(), i.radix()) {
            Ok(n) => Some(n),
            Err(_) => {
                ctx.error(v.span(), format!("{key} must be a non-negative integer, got {i}"));
                None
            }
        },
        other => {
            ctx.error(v.span(), format!("{key} must be an integer, got {}", type_name(other)));
            None
        }
    }
}

fn as_u32(ctx: &mut Ctx, key: &str, v: &Spanned<DeValue>) -> Option<u32> {
    let n = as_count(ctx, key, v)?;
    match u32::try_from(n) {
        Ok(n) => Some(n),
        Err(_) => {
            ctx.error(v.span(), format!("{key} = {n} is out of range"));
            None
        }
    }
}

fn as_number(ctx: &mut Ctx, key: &str, v: &Spanned<DeValue>) -> Option<f64> {
    let parsed = match v.get_ref() {
        DeValue::Float(f) => f.as_str().parse::<f64>().ok(),
        DeValue::Integer(i) => i64::from_str_radix(i.as_str(), i.radix()).ok().map(|n| n as f64),
        other => {
            ctx.error(v.span(), format!("{key} must be a number, got {}", type_name(other)));
            return None;
        }
    };
    match parsed {
        Some(x) if x.is_finite() => Some(x),
        _ => {
            ctx.error(v.span(), format!("{key} must be a finite number"));
            None
        }
    }
}

fn warn_unknown(ctx: &mut Ctx, t: &Table, section: &str, known: &[&str]) {
    for (k, _) in t.iter() {
        let name = k.get_ref().as_ref();
        if !known.contains(&name) {
            ctx.warn(k.span(), format!("unknown key {name:?} in {section} ignored"));
        }
    }
}

fn optional<T>(
    ctx: &mut Ctx,
    t: &Table,
    key: &str,
    default: T,
    read: fn(&mut Ctx, &str, &Spanned<DeValue>) -> Option<T>,
) -> Option<T> {
    match get(t, key) {
        Some(v) => read(ctx, key, v),
        None => Some(default),
    }
}

fn normalise_kind(s: &str) -> String {
    let lower = s.trim().to_ascii_lowercase();
    lower.strip_suffix("library").unwrap_or(&lower).trim_end_matches('_').to_string()
}

fn parse_part(ctx: &mut Ctx, n: usize, t: &Spanned<DeValue>, index: usize) -> Option<LibraryPart> {
    let DeValue::Table(table) = t.get_ref() else {
        ctx.error(t.span(), format!("library entry {} must be a table", index + 1));
        return None;
    };
    let Some(kind_v) = get(table, "type") else {
        ctx.error(
            t.span(),
            format!("library entry {} needs type = \"polynomial\" | \"fourier\" | \"custom\"", index + 1),
        );
        return None;
    };
    let kind = as_string(ctx, "type", kind_v)?;
    let part = match normalise_kind(&kind).as_str() {
        "polynomial" => {
            warn_unknown(ctx, table, "polynomial library", &["type", "degree", "include_interaction", "include_bias"]);
            let Some(dv) = get(table, "degree") else {
                ctx.error(t.span(), "polynomial library needs degree");
                return None;
            };
            let degree = as_u32(ctx, "degree", dv);
            let include_interaction = optional(ctx, table, "include_interaction", true, as_bool);
            let include_bias = optional(ctx, table, "include_bias", true, as_bool);
            LibraryPart::Polynomial {
                degree: degree?,
                include_interaction: include_interaction?,
                include_bias: include_bias?,
            }
        }
        "fourier" => {
            warn_unknown(ctx, table, "fourier library", &["type", "n_frequencies", "include_sin", "include_cos"]);
            let Some(fv) = get(table, "n_frequencies") else {
                ctx.error(t.span(), "fourier library needs n_frequencies");
                return None;
            };
            let n_frequencies = as_u32(ctx, "n_frequencies", fv);
            let include_sin = optional(ctx, table, "include_sin", true, as_bool);
            let include_cos = optional(ctx, table, "include_cos", true, as_bool);
            LibraryPart::Fourier {
                n_frequencies: n_frequencies?,
                include_sin: include_sin?,
                include_cos: include_cos?,
            }
        }
        "custom" => {
            warn_unknown(ctx, table, "custom library", &["type", "terms"]);
            let Some(tv) = get(table, "terms") else {
                ctx.error(t.span(), "custom library needs terms = [\"...\"]");
                return None;
            };
            let DeValue::Array(items) = tv.get_ref() else {
                ctx.error(tv.span(), "terms must be an array of strings");
                return None;
            };
            let mut terms: Vec<TermExpr> = Vec::new();
            let mut ok = true;
            for item in items.iter() {
                let Some(src) = as_string(ctx, "term", item) else {
                    ok = false;
                    continue;
                };
                match parse_term(&src, n) {
                    Ok(term) => terms.push(term),
                    Err(e) => {
                        ctx.error(item.span(), format!("term {src:?}: {e}"));
                        ok = false;
                    }
                }
            }
            if !ok {
                return None;
            }
            if terms.is_empty() {
                ctx.error(tv.span(), "custom library has no terms");
                return None;
            }
            LibraryPart::Custom { terms }
        }
        _ => {
            ctx.error(
                kind_v.span(),
                format!("unknown library type {kind:?}; expected polynomial, fourier or custom"),
            );
            return None;
        }
    };
    if let Err(e) = FeatureLibrarySpec::new(vec![part.clone()]) {
        ctx.error(t.span(), e.to_string());
        return None;
    }
    Some(part)
}

fn parse_optimizer(ctx: &mut Ctx, v: &Spanned<DeValue>) -> Option<OptimizerSpec> {
    let DeValue::Table(table) = v.get_ref() else {
        ctx.error(v.span(), "optimizer must be a table");
        return None;
    };
    let registry = OptimizerRegistry::builtin();
    let Some(kind_v) = get(table, "type") else {
        ctx.error(
            v.span(),
            format!("optimizer needs type = one of {}", registry.names().join(", ")),
        );
        return None;
    };
    let kind = as_string(ctx, "type", kind_v)?;
    let Some(mut spec) = OptimizerSpec::default_for(kind.trim()) else {
        ctx.error(
            kind_v.span(),
            format!("unknown optimizer {kind:?}; supported: {}", registry.names().join(", ")),
        );
        return None;
    };
    let relevant: &[&str] = match spec.kind.as_str() {
        Stlsq::NAME => &["threshold", "alpha", "max_iter"],
        Sr3::NAME => &["threshold", "nu", "max_iter"],
        _ => &[],
    };
    for (k, _) in table.iter() {
        let name = k.get_ref().as_ref();
        if name == "type" || relevant.contains(&name) {
            continue;
        }
        let msg = if ["threshold", "alpha", "nu", "max_iter"].contains(&name) {
            format!("{name} does not apply to {} and is ignored", spec.kind)
        } else {
            format!("unknown key {name:?} in optimizer ignored")
        };
        ctx.warn(k.span(), msg);
    }
    let before = ctx.diags.len();
    for (k, val) in table.iter() {
        let name = k.get_ref().as_ref();
        if !relevant.contains(&name) {
            continue;
        }
        match name {
            "threshold" => spec.threshold = as_number(ctx, name, val).unwrap_or(spec.threshold),
            "alpha" => spec.ridge_alpha = as_number(ctx, name, val).unwrap_or(spec.ridge_alpha),
            "nu" => spec.nu = as_number(ctx, name, val).unwrap_or(spec.nu),
            "max_iter" => {
                let m = as_count(ctx, name, val).unwrap_or(spec.max_iter as u64);
                spec.max_iter = usize::try_from(m).unwrap_or(usize::MAX);
            }
            _ => {}
        }
    }
    if ctx.diags[before..].iter().any(|d| d.is_error()) {
        return None;
    }
    if let Err(e) = registry.build(&spec) {
        ctx.error(v.span(), e.to_string());
        return None;
    }
    Some(spec)
}

/// Parses one block for an `n`-dimensional system. Never panics; every
/// rejection carries at least one error diagnostic.
pub fn parse_candidate(block: &str, n: usize) -> Result<ParsedCandidate, Vec<ParseDiagnostic>> {
    if block.len() > MAX_BLOCK_LENGTH {
        return Err(vec![ParseDiagnostic::error(format!(
            "block is {} bytes, limit is {MAX_BLOCK_LENGTH}",
            block.len()
        ))]);
    }
    let source = block.replace("\r\n", "\n");
    let mut ctx = Ctx {
        source: &source,
        diags: Vec::new(),
    };
    let doc = match DeTable::parse(&source) {
        Ok(d) => d,
        Err(e) => {
            let span = e.span().unwrap_or(0..0);
            let msg = e.message().trim().to_string();
            ctx.error(span, format!("invalid TOML: {msg}"));
            return Err(ctx.diags);
        }
    };
    let root = doc.get_ref();
    warn_unknown(&mut ctx, root, "candidate", &["schema_version", "library", "optimizer"]);

    let mut schema_version = SCHEMA_VERSION;
    if let Some(v) = get(root, "schema_version") {
        if let Some(s) = as_count(&mut ctx, "schema_version", v) {
            if s != u64::from(SCHEMA_VERSION) {
                ctx.error(v.span(), format!("unsupported schema_version {s}; expected {SCHEMA_VERSION}"));
            }
            schema_version = SCHEMA_VERSION;
        }
    }

    let mut parts = Vec::new();
    match get(root, "library") {
        None => ctx.error(0..0, "missing library: add one or more [[library]] tables"),
        Some(v) => match v.get_ref() {
            DeValue::Array(items) => {
                if items.is_empty() {
                    ctx.error(v.span(), "library list is empty");
                }
                for (i, item) in items.iter().enumerate() {
                    if let Some(p) = parse_part(&mut ctx, n, item, i) {
                        parts.push(p);
                    }
                }
            }
            DeValue::Table(_) => {
                if let Some(p) = parse_part(&mut ctx, n, v, 0) {
                    parts.push(p);
                }
            }
            other => ctx.error(v.span(), format!("library must be a list of tables, got {}", type_name(other))),
        },
    }

    let optimizer = match get(root, "optimizer") {
        Some(v) => parse_optimizer(&mut ctx, v),
        None => {
            ctx.warn(0..0, "missing [optimizer]; using STLSQ with threshold 0.1");
            Some(OptimizerSpec::default())
        }
    };

    if ctx.has_errors() {
        return Err(ctx.diags);
    }
    let library = match library_without_repeats(&mut ctx, parts, n) {
        Ok(l) => l,
        Err(e) => {
            ctx.error(0..0, e.to_string());
            return Err(ctx.diags);
        }
    };
    let Some(optimizer) = optimizer else {
        ctx.error(0..0, "invalid optimizer");
        return Err(ctx.diags);
    };
    Ok(ParsedCandidate {
        spec: CandidateSpec {
            library,
            optimizer,
            raw_text: block.to_string(),
            schema_version,
        },
        warnings: ctx.diags,
    })
}

/// As [`parse_candidate`] for raw bytes, rejecting invalid UTF-8.
pub fn parse_candidate_bytes(block: &[u8], n: usize) -> Result<ParsedCandidate, Vec<ParseDiagnostic>> {
    match std::str::from_utf8(block) {
        Ok(s) => parse_candidate(s, n),
        Err(e) => Err(vec![ParseDiagnostic::error(format!(
            "block is not valid UTF-8 (byte {})",
            e.valid_up_to()
        ))]),
    }
}
