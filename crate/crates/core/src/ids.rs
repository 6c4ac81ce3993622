//! Ideographic Description Sequence (IDS) decomposition tables.
//!
//! A table maps a character to one production: either `Atomic` (the character
//! is its own radical) or an ideographic description operator applied to two
//! or three component characters. Flattening expands a character depth-first
//! in component order into its terminal radicals.

use indexmap::IndexMap;

/// Sentinel radical for ideographs the table does not cover.
pub const UNK_CHAR: char = '\u{FFFD}';

/// First synthesized head for nested sub-expressions (plane-16 private use,
/// far away from anything a real table defines).
const SYNTH_BASE: u32 = 0x10_0000;

/// Ideographic description characters, U+2FF0..=U+2FFB.
pub fn is_idc(c: char) -> bool {
    ('\u{2FF0}'..='\u{2FFB}').contains(&c)
}

/// CJK Unified Ideographs: the URO plus extensions A through I. Kana, Latin,
/// digits, punctuation, and the radical-supplement blocks are all outside.
pub fn is_cjk_ideograph(c: char) -> bool {
    matches!(u32::from(c),
        0x4E00..=0x9FFF          // URO
        | 0x3400..=0x4DBF        // extension A
        | 0x20000..=0x2A6DF      // extension B
        | 0x2A700..=0x2B73F      // extension C
        | 0x2B740..=0x2B81F      // extension D
        | 0x2B820..=0x2CEAF      // extension E
        | 0x2CEB0..=0x2EBEF      // extension F
        | 0x2EBF0..=0x2EE5F      // extension I
        | 0x30000..=0x3134F      // extension G
        | 0x31350..=0x323AF      // extension H
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdsOperator {
    /// The character is a terminal radical.
    Atomic,
    /// An ideographic description character in U+2FF0..=U+2FFB.
    Idc(char),
}

impl IdsOperator {
    pub fn from_char(c: char) -> Option<Self> {
        is_idc(c).then_some(IdsOperator::Idc(c))
    }

    /// Component count the operator demands: the two ternary operators
    /// (U+2FF2, U+2FF3) take three, every other IDC takes two.
    pub fn arity(self) -> usize {
        match self {
            IdsOperator::Atomic => 0,
            IdsOperator::Idc('\u{2FF2}') | IdsOperator::Idc('\u{2FF3}') => 3,
            IdsOperator::Idc(_) => 2,
        }
    }
}

/// One table entry: `head` decomposes into `components` under `operator`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdsProduction {
    pub head: char,
    pub operator: IdsOperator,
    pub components: Vec<char>,
}

impl IdsProduction {
    pub fn atomic(head: char) -> Self {
        Self { head, operator: IdsOperator::Atomic, components: Vec::new() }
    }
}

/// Duplicate head definition; the later line won.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseWarning {
    pub line: usize,
    pub head: char,
}

impl std::fmt::Display for ParseWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: duplicate definition of {:?}, keeping the later one", self.line, self.head)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum IdsError {
    #[error("line {line}: expected CODEPOINT<TAB>CHAR<TAB>IDS, found {found} fields")]
    FieldCount { line: usize, found: usize },
    #[error("line {line}: bad codepoint field {field:?}")]
    BadCodepoint { line: usize, field: String },
    #[error("line {line}: codepoint names {expected:?} but the character field holds {found:?}")]
    HeadMismatch { line: usize, expected: char, found: char },
    #[error("line {line}: head field must be a single character")]
    BadHead { line: usize },
    #[error("line {line}: bad IDS expression: {detail}")]
    BadExpression { line: usize, detail: String },
    #[error("decomposition cycle: {}", format_cycle(.0))]
    Cycle(Vec<char>),
}

fn format_cycle(cycle: &[char]) -> String {
    let mut s: String = cycle.iter().flat_map(|c| [*c, ' ']).collect();
    s.pop();
    s.push_str(" -> ");
    s.push(cycle[0]);
    s
}

/// Radical expansion of one character.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RadicalSequence {
    pub radicals: Vec<char>,
    pub origin: char,
}

/// Parsed IDS decomposition table.
#[derive(Debug, Clone, Default)]
pub struct DecompositionTable {
    entries: IndexMap<char, IdsProduction>,
    source_meta: String,
    warnings: Vec<ParseWarning>,
    next_synth: u32,
}

impl DecompositionTable {
    pub fn new(source_meta: impl Into<String>) -> Self {
        Self {
            entries: IndexMap::new(),
            source_meta: source_meta.into(),
            warnings: Vec::new(),
            next_synth: SYNTH_BASE,
        }
    }

    /// Parses the `CODEPOINT<TAB>CHAR<TAB>IDS` line format. Lines starting
    /// with `;` and blank lines are skipped; nested IDS operands become
    /// synthesized intermediate entries; a duplicated head keeps the later
    /// definition and records a warning.
    pub fn parse(text: &str, source_meta: impl Into<String>) -> Result<Self, IdsError> {
        let mut table = Self::new(source_meta);
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            if line.trim().is_empty() || line.trim_start().starts_with(';') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(IdsError::FieldCount { line: line_no, found: fields.len() });
            }
            let codepoint = parse_codepoint(fields[0])
                .ok_or_else(|| IdsError::BadCodepoint { line: line_no, field: fields[0].to_string() })?;
            let mut head_chars = fields[1].chars();
            let head = match (head_chars.next(), head_chars.next()) {
                (Some(c), None) => c,
                _ => return Err(IdsError::BadHead { line: line_no }),
            };
            if codepoint != head {
                return Err(IdsError::HeadMismatch { line: line_no, expected: codepoint, found: head });
            }
            let expr = parse_expression(fields[2])
                .map_err(|detail| IdsError::BadExpression { line: line_no, detail })?;
            table.lower(head, expr, line_no)
                .map_err(|detail| IdsError::BadExpression { line: line_no, detail })?;
        }
        Ok(table)
    }

    /// Converts one parsed expression into productions, synthesizing heads
    /// for nested operands, and installs them.
    fn lower(&mut self, head: char, expr: Expr, line_no: usize) -> Result<(), String> {
        let production = match expr {
            Expr::Leaf(c) if c == head => IdsProduction::atomic(head),
            Expr::Leaf(c) => {
                return Err(format!("expression is the single character {c:?}, not {head:?} itself"));
            }
            Expr::Node(idc, children) => {
                let mut components = Vec::with_capacity(children.len());
                for child in children {
                    match child {
                        Expr::Leaf(c) => components.push(c),
                        node @ Expr::Node(..) => {
                            let synth = char::from_u32(self.next_synth)
                                .expect("synthesized heads stay inside plane 16");
                            self.next_synth += 1;
                            self.lower(synth, node, line_no)?;
                            components.push(synth);
                        }
                    }
                }
                IdsProduction { head, operator: IdsOperator::Idc(idc), components }
            }
        };
        if self.entries.insert(head, production).is_some() {
            self.warnings.push(ParseWarning { line: line_no, head });
        }
        Ok(())
    }

    /// Installs a production, returning the one it replaced.
    pub fn insert(&mut self, production: IdsProduction) -> Option<IdsProduction> {
        self.entries.insert(production.head, production)
    }

    pub fn get(&self, c: char) -> Option<&IdsProduction> {
        self.entries.get(&c)
    }

    pub fn contains(&self, c: char) -> bool {
        self.entries.contains_key(&c)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Productions in insertion order.
    pub fn productions(&self) -> impl Iterator<Item = &IdsProduction> {
        self.entries.values()
    }

    pub fn warnings(&self) -> &[ParseWarning] {
        &self.warnings
    }

    pub fn source_meta(&self) -> &str {
        &self.source_meta
    }

    /// Structural audit: cycles, arity mismatches, and the longest flattening.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        for p in self.entries.values() {
            let expected = p.operator.arity();
            if p.components.len() != expected {
                report.arity_violations.push(ArityViolation {
                    head: p.head,
                    expected,
                    found: p.components.len(),
                });
            }
        }

        let mut state: IndexMap<char, Color> = IndexMap::new();
        let mut stack = Vec::new();
        for &head in self.entries.keys() {
            self.find_cycles(head, &mut state, &mut stack, &mut report.cycles);
        }

        for &head in self.entries.keys() {
            if let Ok(seq) = flatten_character(head, self) {
                report.max_flattened_len = report.max_flattened_len.max(seq.radicals.len());
            }
        }
        report
    }

    fn find_cycles(
        &self,
        c: char,
        state: &mut IndexMap<char, Color>,
        stack: &mut Vec<char>,
        cycles: &mut Vec<Vec<char>>,
    ) {
        match state.get(&c) {
            Some(Color::Done) => return,
            Some(Color::InProgress) => {
                let pos = stack.iter().position(|&v| v == c).expect("in-progress node is on the stack");
                cycles.push(stack[pos..].to_vec());
                return;
            }
            None => {}
        }
        let Some(p) = self.entries.get(&c) else { return };
        state.insert(c, Color::InProgress);
        stack.push(c);
        for &comp in &p.components {
            self.find_cycles(comp, state, stack, cycles);
        }
        stack.pop();
        state.insert(c, Color::Done);
    }
}

#[derive(Clone, Copy)]
enum Color {
    InProgress,
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArityViolation {
    pub head: char,
    pub expected: usize,
    pub found: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub cycles: Vec<Vec<char>>,
    pub arity_violations: Vec<ArityViolation>,
    pub max_flattened_len: usize,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.cycles.is_empty() && self.arity_violations.is_empty()
    }
}

fn parse_codepoint(field: &str) -> Option<char> {
    let hex = field.strip_prefix("U+")?;
    if hex.is_empty() || hex.len() > 6 {
        return None;
    }
    char::from_u32(u32::from_str_radix(hex, 16).ok()?)
}

enum Expr {
    Leaf(char),
    Node(char, Vec<Expr>),
}

/// Prefix IDS grammar: an expression is a terminal character, or an IDC
/// followed by exactly `arity` sub-expressions. The whole field must be
/// consumed.
fn parse_expression(text: &str) -> Result<Expr, String> {
    let mut chars = text.chars();
    let expr = parse_expr_inner(&mut chars)?;
    match chars.next() {
        None => Ok(expr),
        Some(extra) => Err(format!("trailing {extra:?} after a complete expression")),
    }
}

fn parse_expr_inner(chars: &mut std::str::Chars<'_>) -> Result<Expr, String> {
    let c = chars.next().ok_or_else(|| "expression ended while an operand was expected".to_string())?;
    match IdsOperator::from_char(c) {
        Some(op) => {
            let children = (0..op.arity())
                .map(|_| parse_expr_inner(chars))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Expr::Node(c, children))
        }
        None => Ok(Expr::Leaf(c)),
    }
}

/// Expands `c` depth-first into terminal radicals, in component order.
///
/// A character absent from the table is its own radical when it is not a CJK
/// ideograph (kana, Latin, digits, punctuation), and the [`UNK_CHAR`]
/// sentinel when it is; the same rule applies to absent components, so every
/// emitted terminal is its own flattening.
pub fn flatten_character(c: char, table: &DecompositionTable) -> Result<RadicalSequence, IdsError> {
    let mut radicals = Vec::new();
    let mut visiting = Vec::new();
    expand(c, table, &mut visiting, &mut radicals)?;
    Ok(RadicalSequence { radicals, origin: c })
}

fn expand(
    c: char,
    table: &DecompositionTable,
    visiting: &mut Vec<char>,
    out: &mut Vec<char>,
) -> Result<(), IdsError> {
    match table.get(c) {
        None => {
            out.push(if is_cjk_ideograph(c) { UNK_CHAR } else { c });
            Ok(())
        }
        Some(p) if p.operator == IdsOperator::Atomic => {
            out.push(c);
            Ok(())
        }
        Some(p) => {
            if let Some(pos) = visiting.iter().position(|&v| v == c) {
                return Err(IdsError::Cycle(visiting[pos..].to_vec()));
            }
            visiting.push(c);
            for &comp in &p.components {
                expand(comp, table, visiting, out)?;
            }
            visiting.pop();
            Ok(())
        }
    }
}
