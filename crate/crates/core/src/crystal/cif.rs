//! Parser for the subset of CIF needed here: cell parameters, an optional
//! symmetry declaration (P1 only) and an `_atom_site_` loop with fractional
//! coordinates. Only the first data block is read.

use super::{CrystalError, PeriodicPointSet};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
struct Token {
    text: String,
    line: usize,
    quoted: bool,
}

fn err(line: usize, msg: impl Into<String>) -> CrystalError {
    CrystalError::Cif {
        line,
        msg: msg.into(),
    }
}

/// Splits the text into whitespace-separated tokens, honouring quotes,
/// `#` comments and `;`-delimited text fields (which become one token).
fn tokenize(text: &str) -> Result<Vec<Token>, CrystalError> {
    let mut out = Vec::new();
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l)).peekable();
    while let Some((no, line)) = lines.next() {
        if let Some(rest) = line.strip_prefix(';') {
            let mut body = rest.to_string();
            loop {
                match lines.next() {
                    Some((_, l)) if l.starts_with(';') => break,
                    Some((_, l)) => {
                        body.push('\n');
                        body.push_str(l);
                    }
                    None => return Err(err(no, "unterminated ';' text field")),
                }
            }
            out.push(Token {
                text: body,
                line: no,
                quoted: true,
            });
            continue;
        }
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if c.is_whitespace() {
                i += 1;
            } else if c == '#' {
                break;
            } else if c == '\'' || c == '"' {
                // A quote closes only when followed by whitespace or end of line.
                let mut j = i + 1;
                while j < chars.len() && !(chars[j] == c && chars.get(j + 1).is_none_or(|n| n.is_whitespace())) {
                    j += 1;
                }
                if j >= chars.len() {
                    return Err(err(no, format!("unterminated quoted value starting at column {}", i + 1)));
                }
                out.push(Token {
                    text: chars[i + 1..j].iter().collect(),
                    line: no,
                    quoted: true,
                });
                i = j + 1;
            } else {
                let start = i;
                while i < chars.len() && !chars[i].is_whitespace() {
                    i += 1;
                }
                out.push(Token {
                    text: chars[start..i].iter().collect(),
                    line: no,
                    quoted: false,
                });
            }
        }
    }
    Ok(out)
}

/// Numeric value with an optional standard uncertainty suffix, e.g. `10.23(4)`.
fn number(tok: &Token) -> Result<f64, CrystalError> {
    let t = tok.text.as_str();
    let core = match t.find('(') {
        Some(p) if t.ends_with(')') => &t[..p],
        Some(_) => return Err(err(tok.line, format!("malformed uncertainty in '{t}'"))),
        None => t,
    };
    if core == "?" || core == "." {
        return Err(err(tok.line, format!("value is unknown ('{core}')")));
    }
    core.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| err(tok.line, format!("cannot parse number '{t}'")))
}

fn is_tag(tok: &Token) -> bool {
    !tok.quoted && tok.text.starts_with('_')
}

fn is_reserved(tok: &Token) -> bool {
    if tok.quoted {
        return false;
    }
    let l = tok.text.to_ascii_lowercase();
    l == "loop_" || l.starts_with("data_") || l.starts_with("save_") || l == "global_" || l == "stop_"
}

struct Loop {
    tags: Vec<String>,
    rows: Vec<Vec<Token>>,
    line: usize,
}

#[derive(Default)]
struct Block {
    items: Vec<(String, Token)>,
    loops: Vec<Loop>,
}

fn read_block(tokens: &[Token]) -> Result<Block, CrystalError> {
    let start = tokens
        .iter()
        .position(|t| !t.quoted && t.text.to_ascii_lowercase().starts_with("data_"))
        .map(|p| p + 1)
        .unwrap_or(0);
    let mut block = Block::default();
    let mut i = start;
    while i < tokens.len() {
        let tok = &tokens[i];
        if !tok.quoted && tok.text.to_ascii_lowercase().starts_with("data_") {
            log::warn!("line {}: ignoring data blocks after the first", tok.line);
            break;
        }
        if !tok.quoted && tok.text.eq_ignore_ascii_case("loop_") {
            let line = tok.line;
            i += 1;
            let mut tags = Vec::new();
            while i < tokens.len() && is_tag(&tokens[i]) {
                tags.push(tokens[i].text.to_ascii_lowercase());
                i += 1;
            }
            if tags.is_empty() {
                return Err(err(line, "loop_ without tags"));
            }
            let mut values = Vec::new();
            while i < tokens.len() && !is_tag(&tokens[i]) && !is_reserved(&tokens[i]) {
                values.push(tokens[i].clone());
                i += 1;
            }
            if values.len() % tags.len() != 0 {
                return Err(err(
                    line,
                    format!("loop has {} values, not a multiple of its {} tags", values.len(), tags.len()),
                ));
            }
            let rows = values.chunks(tags.len()).map(<[Token]>::to_vec).collect();
            block.loops.push(Loop { tags, rows, line });
        } else if is_tag(tok) {
            let value = tokens
                .get(i + 1)
                .filter(|v| !is_tag(v) && !is_reserved(v))
                .ok_or_else(|| err(tok.line, format!("tag {} has no value", tok.text)))?;
            block.items.push((tok.text.to_ascii_lowercase(), value.clone()));
            i += 2;
        } else {
            return Err(err(tok.line, format!("unexpected token '{}'", tok.text)));
        }
    }
    Ok(block)
}

fn check_p1(block: &Block) -> Result<(), CrystalError> {
    for (tag, tok) in &block.items {
        match tag.as_str() {
            "_symmetry_space_group_name_h-m" | "_space_group_name_h-m_alt" => {
                let name: String = tok.text.chars().filter(|c| !c.is_whitespace()).collect();
                if !name.eq_ignore_ascii_case("p1") {
                    return Err(err(tok.line, format!("space group '{}' is not P1", tok.text)));
                }
            }
            "_symmetry_int_tables_number" | "_space_group_it_number" => {
                if tok.text.trim() != "1" {
                    return Err(err(tok.line, format!("space group number {} is not 1 (P1)", tok.text)));
                }
            }
            _ => {}
        }
    }
    for lp in &block.loops {
        let col = lp.tags.iter().position(|t| {
            t == "_symmetry_equiv_pos_as_xyz" || t == "_space_group_symop_operation_xyz"
        });
        if let Some(c) = col {
            for row in &lp.rows {
                let op: String = row[c].text.chars().filter(|c| !c.is_whitespace()).collect();
                if !op.eq_ignore_ascii_case("x,y,z") {
                    return Err(err(
                        row[c].line,
                        format!("symmetry operation '{}' is not the identity; only P1 is supported", row[c].text),
                    ));
                }
            }
        }
    }
    Ok(())
}

/// Parses P1 CIF text into a periodic point set.
pub fn parse_cif<T: Scalar>(text: &str) -> Result<PeriodicPointSet<T>, CrystalError> {
    let tokens = tokenize(text)?;
    let block = read_block(&tokens)?;
    check_p1(&block)?;
    let last_line = tokens.last().map_or(1, |t| t.line);
    let cell = |tag: &str| -> Result<f64, CrystalError> {
        let (_, tok) = block
            .items
            .iter()
            .find(|(t, _)| t == tag)
            .ok_or_else(|| err(last_line, format!("missing cell parameter {tag}")))?;
        number(tok)
    };
    let lengths = [cell("_cell_length_a")?, cell("_cell_length_b")?, cell("_cell_length_c")?];
    let angles = [
        cell("_cell_angle_alpha")?,
        cell("_cell_angle_beta")?,
        cell("_cell_angle_gamma")?,
    ];
    let sites = block
        .loops
        .iter()
        .find(|l| l.tags.iter().any(|t| t.starts_with("_atom_site_")))
        .ok_or_else(|| err(last_line, "no _atom_site_ loop"))?;
    let col = |name: &str| sites.tags.iter().position(|t| t == name);
    let fract = ["_atom_site_fract_x", "_atom_site_fract_y", "_atom_site_fract_z"]
        .map(|n| col(n).ok_or_else(|| err(sites.line, format!("atom-site loop lacks {n}"))));
    let [fx, fy, fz] = [fract[0].clone()?, fract[1].clone()?, fract[2].clone()?];
    let species_col = col("_atom_site_type_symbol").or_else(|| col("_atom_site_label"));
    let mut motif = Vec::with_capacity(sites.rows.len());
    let mut species = Vec::with_capacity(sites.rows.len());
    for row in &sites.rows {
        motif.push([number(&row[fx])?, number(&row[fy])?, number(&row[fz])?]);
        species.push(species_col.map(|c| row[c].text.clone()).unwrap_or_default());
    }
    PeriodicPointSet::from_cell(lengths, angles, motif, species)
}
