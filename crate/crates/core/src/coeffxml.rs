//! Parser for the decoder-stage macroblock coefficient dump.
//!
//! The dump is an XML document of `Picture` elements, each holding the
//! frame's `MacroBlock` records: a pixel `Position`, a prediction mode
//! string and one or more `Coeffs` matrices whose `Row` children are
//! comma-separated integers. Parsed values are immutable and safe to
//! share across threads; distinct documents may be parsed concurrently.

use std::io::BufRead;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use thiserror::Error;

/// Width and height of a macroblock in pixels.
pub const MACROBLOCK_SIZE: usize = 16;

#[derive(Debug, Error)]
pub enum CoeffXmlError {
    #[error("malformed xml at byte {offset}: {message}")]
    Malformed { offset: u64, message: String },
    #[error("element <{element}>: bad attribute {name}: {value:?}")]
    BadAttr { element: String, name: String, value: String },
    #[error("picture {picture_id}: missing <{element}>")]
    MissingElement { picture_id: i64, element: String },
    #[error("picture {picture_id}: unknown slice type {value:?}")]
    BadSliceType { picture_id: i64, value: String },
    #[error("picture {picture_id} macroblock num {mb_num}: non-integer coefficient token {token:?}")]
    BadCoeffToken { picture_id: i64, mb_num: u32, token: String },
    #[error("picture {picture_id} macroblock num {mb_num}: ragged coefficient rows ({first} then {got} entries)")]
    RaggedRows { picture_id: i64, mb_num: u32, first: usize, got: usize },
    #[error("picture {picture_id} macroblock num {mb_num}: empty coefficient matrix")]
    EmptyCoeffs { picture_id: i64, mb_num: u32 },
    #[error("picture {picture_id} macroblock num {mb_num}: position ({x}, {y}) outside {width}x{height} frame")]
    OutOfBounds { picture_id: i64, mb_num: u32, x: u32, y: u32, width: usize, height: usize },
    #[error("picture {picture_id} macroblock num {mb_num}: position ({x}, {y}) is not macroblock-aligned")]
    Misaligned { picture_id: i64, mb_num: u32, x: u32, y: u32 },
    #[error("picture {picture_id}: {count} macroblocks but {expected} grid cells for {width}x{height}")]
    GridMismatch { picture_id: i64, count: usize, expected: usize, width: usize, height: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Slice type of a picture, parsed from its `TypeString`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SliceType {
    I,
    P,
    B,
}

impl SliceType {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "SLICE_TYPE_I" => Some(SliceType::I),
            "SLICE_TYPE_P" => Some(SliceType::P),
            "SLICE_TYPE_B" => Some(SliceType::B),
            _ => None,
        }
    }

    pub fn type_string(self) -> &'static str {
        match self {
            SliceType::I => "SLICE_TYPE_I",
            SliceType::P => "SLICE_TYPE_P",
            SliceType::B => "SLICE_TYPE_B",
        }
    }
}

/// One rectangular matrix of transform coefficients.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoeffBlock {
    cols: usize,
    values: Vec<i32>,
}

impl CoeffBlock {
    /// Builds a block from rows; `None` if rows are ragged or the matrix
    /// is empty.
    pub fn from_rows(rows: &[Vec<i32>]) -> Option<Self> {
        let cols = rows.first()?.len();
        if cols == 0 || rows.iter().any(|r| r.len() != cols) {
            return None;
        }
        Some(CoeffBlock { cols, values: rows.iter().flatten().copied().collect() })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0);
        CoeffBlock { cols, values: vec![0; rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.values.len() / self.cols
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[i32] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn values(&self) -> &[i32] {
        &self.values
    }

    /// True when any coefficient other than the DC term at (0,0) is
    /// nonzero.
    pub fn has_nonzero_ac(&self) -> bool {
        self.values.iter().enumerate().any(|(i, &v)| i != 0 && v != 0)
    }
}

/// A single macroblock record. `num` is the dump's own numbering and is
/// advisory only; document order and `Position` identify the block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MacroblockRecord {
    pub num: u32,
    pub x: u32,
    pub y: u32,
    pub pred_mode: String,
    pub coeffs: Vec<CoeffBlock>,
}

impl MacroblockRecord {
    /// Survival test: any non-DC coefficient in any of the block's
    /// matrices is nonzero.
    pub fn has_nonzero_ac(&self) -> bool {
        self.coeffs.iter().any(CoeffBlock::has_nonzero_ac)
    }
}

/// All macroblock records of one picture, in document order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameCoeffs {
    pub picture_id: i64,
    pub poc: i64,
    pub slice_type: SliceType,
    pub macroblocks: Vec<MacroblockRecord>,
}

/// Grid cells spanned by a frame of the given resolution.
pub fn macroblock_grid(width: usize, height: usize) -> (usize, usize) {
    (width.div_ceil(MACROBLOCK_SIZE), height.div_ceil(MACROBLOCK_SIZE))
}

/// Pred-mode string used for macroblocks synthesized by lenient-mode
/// padding.
pub const PAD_PRED_MODE: &str = "PAD";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseMode {
    /// Error when a picture's macroblock count differs from the grid.
    Strict,
    /// Warn instead, and pad uncovered grid cells with dead (all-zero)
    /// records.
    Lenient,
}

/// Parse result: frames in document order plus any lenient-mode warnings.
#[derive(Debug, Clone)]
pub struct ParsedDump {
    pub frames: Vec<FrameCoeffs>,
    pub warnings: Vec<String>,
}

/// Parses a coefficient dump, validating positions against the declared
/// frame resolution.
pub fn parse_coeff_dump<R: BufRead>(
    source: R,
    width: usize,
    height: usize,
    mode: ParseMode,
) -> Result<ParsedDump, CoeffXmlError> {
    let mut reader = Reader::from_reader(source);
    reader.config_mut().trim_text(true);

    let mut frames = Vec::new();
    let mut warnings = Vec::new();
    let mut buf = Vec::new();
    loop {
        buf.clear();
        match read_event(&mut reader, &mut buf)? {
            Event::Start(e) => {
                if e.name().as_ref() == b"Picture" {
                    let start = e.to_owned();
                    let frame =
                        parse_picture(&mut reader, &start, width, height, mode, &mut warnings)?;
                    frames.push(frame);
                }
                // Anything else is treated as a wrapper element.
            }
            Event::Eof => break,
            _ => {}
        }
    }
    Ok(ParsedDump { frames, warnings })
}

fn read_event<'b, R: BufRead>(
    reader: &mut Reader<R>,
    buf: &'b mut Vec<u8>,
) -> Result<Event<'b>, CoeffXmlError> {
    let offset = reader.buffer_position();
    reader.read_event_into(buf).map_err(|e| CoeffXmlError::Malformed {
        offset,
        message: e.to_string(),
    })
}

fn attr_i64(e: &BytesStart, name: &str) -> Result<i64, CoeffXmlError> {
    let raw = attr_string(e, name)?;
    raw.trim().parse().map_err(|_| bad_attr(e, name, &raw))
}

fn attr_u32(e: &BytesStart, name: &str) -> Result<u32, CoeffXmlError> {
    let raw = attr_string(e, name)?;
    raw.trim().parse().map_err(|_| bad_attr(e, name, &raw))
}

fn attr_string(e: &BytesStart, name: &str) -> Result<String, CoeffXmlError> {
    for attr in e.attributes() {
        let attr = attr.map_err(|err| bad_attr(e, name, &err.to_string()))?;
        if attr.key.as_ref() == name.as_bytes() {
            let v = attr.unescape_value().map_err(|err| bad_attr(e, name, &err.to_string()))?;
            return Ok(v.into_owned());
        }
    }
    Err(bad_attr(e, name, "<missing>"))
}

fn bad_attr(e: &BytesStart, name: &str, value: &str) -> CoeffXmlError {
    CoeffXmlError::BadAttr {
        element: String::from_utf8_lossy(e.name().as_ref()).into_owned(),
        name: name.to_string(),
        value: value.to_string(),
    }
}

/// Reads the text content of an element just opened with `tag`, up to its
/// end tag.
fn read_text<R: BufRead>(reader: &mut Reader<R>, tag: &[u8]) -> Result<String, CoeffXmlError> {
    let mut text = String::new();
    let mut buf = Vec::new();
    loop {
        buf.clear();
        match read_event(reader, &mut buf)? {
            Event::Text(t) => {
                let piece = t.unescape().map_err(|e| CoeffXmlError::Malformed {
                    offset: reader.buffer_position(),
                    message: e.to_string(),
                })?;
                text.push_str(&piece);
            }
            Event::End(e) if e.name().as_ref() == tag => return Ok(text),
            Event::Eof => {
                return Err(CoeffXmlError::Malformed {
                    offset: reader.buffer_position(),
                    message: format!(
                        "unexpected end of document inside <{}>",
                        String::from_utf8_lossy(tag)
                    ),
                })
            }
            _ => {
                return Err(CoeffXmlError::Malformed {
                    offset: reader.buffer_position(),
                    message: format!(
                        "expected text inside <{}>",
                        String::from_utf8_lossy(tag)
                    ),
                })
            }
        }
    }
}

/// Skips the subtree of an element just opened with `tag`.
fn skip_subtree<R: BufRead>(reader: &mut Reader<R>, tag: &[u8]) -> Result<(), CoeffXmlError> {
    let mut depth = 1usize;
    let mut buf = Vec::new();
    loop {
        buf.clear();
        match read_event(reader, &mut buf)? {
            Event::Start(_) => depth += 1,
            Event::End(_) => {
                depth -= 1;
                if depth == 0 {
                    return Ok(());
                }
            }
            Event::Eof => {
                return Err(CoeffXmlError::Malformed {
                    offset: reader.buffer_position(),
                    message: format!(
                        "unexpected end of document inside <{}>",
                        String::from_utf8_lossy(tag)
                    ),
                })
            }
            _ => {}
        }
    }
}

fn parse_picture<R: BufRead>(
    reader: &mut Reader<R>,
    start: &BytesStart,
    width: usize,
    height: usize,
    mode: ParseMode,
    warnings: &mut Vec<String>,
) -> Result<FrameCoeffs, CoeffXmlError> {
    let picture_id = attr_i64(start, "id")?;
    let poc = attr_i64(start, "poc")?;
    let mut slice_type = None;
    let mut macroblocks = Vec::new();

    let mut buf = Vec::new();
    loop {
        buf.clear();
        match read_event(reader, &mut buf)? {
            Event::Start(e) => match e.name().as_ref() {
                b"TypeString" => {
                    let text = read_text(reader, b"TypeString")?;
                    let trimmed = text.trim().to_string();
                    slice_type = Some(SliceType::parse(&trimmed).ok_or(
                        CoeffXmlError::BadSliceType { picture_id, value: trimmed },
                    )?);
                }
                b"MacroBlock" => {
                    let mb_start = e.to_owned();
                    let mb = parse_macroblock(reader, &mb_start, picture_id, width, height)?;
                    macroblocks.push(mb);
                }
                other => {
                    let tag = other.to_vec();
                    skip_subtree(reader, &tag)?;
                }
            },
            Event::End(e) if e.name().as_ref() == b"Picture" => break,
            Event::Eof => {
                return Err(CoeffXmlError::Malformed {
                    offset: reader.buffer_position(),
                    message: "unexpected end of document inside <Picture>".into(),
                })
            }
            _ => {}
        }
    }

    let slice_type = slice_type.ok_or(CoeffXmlError::MissingElement {
        picture_id,
        element: "TypeString".into(),
    })?;

    let (gw, gh) = macroblock_grid(width, height);
    let expected = gw * gh;
    if macroblocks.len() != expected {
        match mode {
            ParseMode::Strict => {
                return Err(CoeffXmlError::GridMismatch {
                    picture_id,
                    count: macroblocks.len(),
                    expected,
                    width,
                    height,
                });
            }
            ParseMode::Lenient => {
                let covered: std::collections::HashSet<(usize, usize)> = macroblocks
                    .iter()
                    .map(|m| (m.x as usize / MACROBLOCK_SIZE, m.y as usize / MACROBLOCK_SIZE))
                    .collect();
                let mut padded = 0usize;
                for cy in 0..gh {
                    for cx in 0..gw {
                        if !covered.contains(&(cx, cy)) {
                            macroblocks.push(MacroblockRecord {
                                num: (cy * gw + cx) as u32,
                                x: (cx * MACROBLOCK_SIZE) as u32,
                                y: (cy * MACROBLOCK_SIZE) as u32,
                                pred_mode: PAD_PRED_MODE.to_string(),
                                coeffs: vec![CoeffBlock::zeros(4, 4)],
                            });
                            padded += 1;
                        }
                    }
                }
                warnings.push(format!(
                    "picture {picture_id}: {count} macroblocks, expected {expected} for \
                     {width}x{height}; padded {padded} missing cells as dead",
                    count = macroblocks.len() - padded,
                ));
            }
        }
    }

    Ok(FrameCoeffs { picture_id, poc, slice_type, macroblocks })
}

fn parse_macroblock<R: BufRead>(
    reader: &mut Reader<R>,
    start: &BytesStart,
    picture_id: i64,
    width: usize,
    height: usize,
) -> Result<MacroblockRecord, CoeffXmlError> {
    let mb_num = attr_u32(start, "num")?;
    let mut x = None;
    let mut y = None;
    let mut pred_mode = None;
    let mut coeffs = Vec::new();

    let mut buf = Vec::new();
    loop {
        buf.clear();
        match read_event(reader, &mut buf)? {
            Event::Start(e) => match e.name().as_ref() {
                b"Position" => {
                    let (px, py) = parse_position(reader, picture_id, mb_num)?;
                    x = Some(px);
                    y = Some(py);
                }
                b"PredModeString" => {
                    pred_mode = Some(read_text(reader, b"PredModeString")?.trim().to_string());
                }
                b"Coeffs" => {
                    coeffs.push(parse_coeffs(reader, picture_id, mb_num)?);
                }
                other => {
                    let tag = other.to_vec();
                    skip_subtree(reader, &tag)?;
                }
            },
            Event::End(e) if e.name().as_ref() == b"MacroBlock" => break,
            Event::Eof => {
                return Err(CoeffXmlError::Malformed {
                    offset: reader.buffer_position(),
                    message: "unexpected end of document inside <MacroBlock>".into(),
                })
            }
            _ => {}
        }
    }

    let x = x.ok_or(CoeffXmlError::MissingElement { picture_id, element: "Position/X".into() })?;
    let y = y.ok_or(CoeffXmlError::MissingElement { picture_id, element: "Position/Y".into() })?;
    let pred_mode = pred_mode.ok_or(CoeffXmlError::MissingElement {
        picture_id,
        element: "PredModeString".into(),
    })?;

    if !(x as usize).is_multiple_of(MACROBLOCK_SIZE) || !(y as usize).is_multiple_of(MACROBLOCK_SIZE) {
        return Err(CoeffXmlError::Misaligned { picture_id, mb_num, x, y });
    }
    if x as usize >= width || y as usize >= height {
        return Err(CoeffXmlError::OutOfBounds { picture_id, mb_num, x, y, width, height });
    }

    Ok(MacroblockRecord { num: mb_num, x, y, pred_mode, coeffs })
}

fn parse_position<R: BufRead>(
    reader: &mut Reader<R>,
    picture_id: i64,
    mb_num: u32,
) -> Result<(u32, u32), CoeffXmlError> {
    let mut x = None;
    let mut y = None;
    let mut buf = Vec::new();
    loop {
        buf.clear();
        match read_event(reader, &mut buf)? {
            Event::Start(e) => match e.name().as_ref() {
                b"X" => {
                    let t = read_text(reader, b"X")?;
                    x = Some(t.trim().parse::<u32>().map_err(|_| CoeffXmlError::BadCoeffToken {
                        picture_id,
                        mb_num,
                        token: t.trim().to_string(),
                    })?);
                }
                b"Y" => {
                    let t = read_text(reader, b"Y")?;
                    y = Some(t.trim().parse::<u32>().map_err(|_| CoeffXmlError::BadCoeffToken {
                        picture_id,
                        mb_num,
                        token: t.trim().to_string(),
                    })?);
                }
                other => {
                    let tag = other.to_vec();
                    skip_subtree(reader, &tag)?;
                }
            },
            Event::End(e) if e.name().as_ref() == b"Position" => break,
            Event::Eof => {
                return Err(CoeffXmlError::Malformed {
                    offset: reader.buffer_position(),
                    message: "unexpected end of document inside <Position>".into(),
                })
            }
            _ => {}
        }
    }
    match (x, y) {
        (Some(x), Some(y)) => Ok((x, y)),
        _ => Err(CoeffXmlError::MissingElement { picture_id, element: "Position/X or Y".into() }),
    }
}

fn parse_coeffs<R: BufRead>(
    reader: &mut Reader<R>,
    picture_id: i64,
    mb_num: u32,
) -> Result<CoeffBlock, CoeffXmlError> {
    let mut rows: Vec<Vec<i32>> = Vec::new();
    let mut buf = Vec::new();
    loop {
        buf.clear();
        match read_event(reader, &mut buf)? {
            Event::Start(e) if e.name().as_ref() == b"Row" => {
                let text = read_text(reader, b"Row")?;
                let mut row = Vec::new();
                for token in text.split(',') {
                    let token = token.trim();
                    row.push(token.parse::<i32>().map_err(|_| CoeffXmlError::BadCoeffToken {
                        picture_id,
                        mb_num,
                        token: token.to_string(),
                    })?);
                }
                if let Some(first) = rows.first() {
                    if first.len() != row.len() {
                        return Err(CoeffXmlError::RaggedRows {
                            picture_id,
                            mb_num,
                            first: first.len(),
                            got: row.len(),
                        });
                    }
                }
                rows.push(row);
            }
            Event::Start(e) => {
                let tag = e.name().as_ref().to_vec();
                skip_subtree(reader, &tag)?;
            }
            Event::End(e) if e.name().as_ref() == b"Coeffs" => break,
            Event::Eof => {
                return Err(CoeffXmlError::Malformed {
                    offset: reader.buffer_position(),
                    message: "unexpected end of document inside <Coeffs>".into(),
                })
            }
            _ => {}
        }
    }
    CoeffBlock::from_rows(&rows).ok_or(CoeffXmlError::EmptyCoeffs { picture_id, mb_num })
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Serializes frames back into the dump schema, wrapped in a `CoeffDump`
/// root element.
pub fn write_coeff_dump<W: std::io::Write>(
    frames: &[FrameCoeffs],
    out: &mut W,
) -> std::io::Result<()> {
    writeln!(out, "<CoeffDump>")?;
    for frame in frames {
        writeln!(out, "  <Picture id=\"{}\" poc=\"{}\">", frame.picture_id, frame.poc)?;
        writeln!(out, "    <TypeString>{}</TypeString>", frame.slice_type.type_string())?;
        for mb in &frame.macroblocks {
            writeln!(out, "    <MacroBlock num=\"{}\">", mb.num)?;
            writeln!(out, "      <Position>")?;
            writeln!(out, "        <X>{}</X>", mb.x)?;
            writeln!(out, "        <Y>{}</Y>", mb.y)?;
            writeln!(out, "      </Position>")?;
            writeln!(out, "      <PredModeString>{}</PredModeString>", escape_xml(&mb.pred_mode))?;
            for block in &mb.coeffs {
                writeln!(out, "      <Coeffs>")?;
                for r in 0..block.rows() {
                    let row: Vec<String> = block.row(r).iter().map(|v| v.to_string()).collect();
                    writeln!(out, "        <Row>{}</Row>", row.join(","))?;
                }
                writeln!(out, "      </Coeffs>")?;
            }
            writeln!(out, "    </MacroBlock>")?;
        }
        writeln!(out, "  </Picture>")?;
    }
    writeln!(out, "</CoeffDump>")
}

/// Per-slice-type frame counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SliceHistogram {
    pub i: usize,
    pub p: usize,
    pub b: usize,
}

impl SliceHistogram {
    pub fn total(&self) -> usize {
        self.i + self.p + self.b
    }
}

pub fn slice_type_histogram(frames: &[FrameCoeffs]) -> SliceHistogram {
    let mut hist = SliceHistogram::default();
    for f in frames {
        match f.slice_type {
            SliceType::I => hist.i += 1,
            SliceType::P => hist.p += 1,
            SliceType::B => hist.b += 1,
        }
    }
    hist
}
