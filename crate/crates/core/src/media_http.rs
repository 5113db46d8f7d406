//! HTTP/1.1 dialect for shaped streaming: open-ended `Range: seconds=N-`
//! requests, `X-Stream-Info` metadata, and 200/206/204 responses including
//! the range correction sent after an aborted burst.
//!
//! Header lines are kept verbatim (name, separator and value), so messages
//! written with `Name=value` or `Name = value` survive a parse/render round
//! trip. A line starting with whitespace or a lowercase letter continues the
//! previous header. Rendering uses CRLF; parsing accepts LF.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("empty message")]
    Empty,
    #[error("malformed start line '{0}'")]
    StartLine(String),
    #[error("malformed header line '{0}'")]
    HeaderLine(String),
    #[error("missing {0} header")]
    MissingHeader(&'static str),
    #[error("malformed seconds range '{0}'")]
    SecondsRange(String),
    #[error("malformed Content-Range '{0}'")]
    ContentRange(String),
    #[error("X-Stream-Info has no bitrate")]
    MissingBitrate,
    #[error("bad X-Stream-Info field '{0}'")]
    StreamInfo(String),
    #[error("X-Stream-Info seconds {info} disagree with Content-Range {range}")]
    Inconsistent { info: String, range: String },
}

/// A header exactly as written.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Header {
    pub name: String,
    /// Text between the name and the value, e.g. `": "` or `" = "`.
    pub separator: String,
    pub value: String,
    /// Folded continuation lines, verbatim.
    pub continuation: Vec<String>,
}

impl Header {
    pub fn new(name: &str, value: impl Into<String>) -> Self {
        Header { name: name.to_string(), separator: ": ".into(), value: value.into(), continuation: Vec::new() }
    }

    /// Value with continuation lines appended.
    pub fn full_value(&self) -> String {
        let mut v = self.value.trim_end().to_string();
        for c in &self.continuation {
            v.push_str(c.trim());
        }
        v
    }

    fn parse(line: &str) -> Result<Self, ProtocolError> {
        let name_end = line
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '-' || c == '_'))
            .ok_or_else(|| ProtocolError::HeaderLine(line.into()))?;
        let rest = &line[name_end..];
        let trimmed = rest.trim_start_matches([' ', '\t']);
        if name_end == 0 || !(trimmed.starts_with(':') || trimmed.starts_with('=')) {
            return Err(ProtocolError::HeaderLine(line.into()));
        }
        let after = &trimmed[1..];
        let value_start = after.len() - after.trim_start_matches([' ', '\t']).len();
        let sep_len = (rest.len() - trimmed.len()) + 1 + value_start;
        Ok(Header {
            name: line[..name_end].to_string(),
            separator: rest[..sep_len].to_string(),
            value: rest[sep_len..].to_string(),
            continuation: Vec::new(),
        })
    }

    fn render_into(&self, out: &mut String) {
        out.push_str(&self.name);
        out.push_str(&self.separator);
        out.push_str(&self.value);
        out.push_str("\r\n");
        for c in &self.continuation {
            out.push_str(c);
            out.push_str("\r\n");
        }
    }
}

fn find_header<'a>(headers: &'a [Header], name: &str) -> Option<&'a Header> {
    headers.iter().find(|h| h.name.eq_ignore_ascii_case(name))
}

/// Start line plus header block of one message, without interpreting
/// either.
pub fn parse_head(raw: &str) -> Result<(String, Vec<Header>), ProtocolError> {
    let mut lines = raw.split('\n').map(|l| l.strip_suffix('\r').unwrap_or(l));
    let start = loop {
        match lines.next() {
            Some(l) if l.trim().is_empty() => continue,
            Some(l) => break l.to_string(),
            None => return Err(ProtocolError::Empty),
        }
    };
    let mut headers: Vec<Header> = Vec::new();
    for line in lines {
        if line.is_empty() {
            break;
        }
        let first = line.chars().next().unwrap_or(' ');
        if first.is_whitespace() || first.is_ascii_lowercase() {
            let last = headers.last_mut().ok_or_else(|| ProtocolError::HeaderLine(line.into()))?;
            last.continuation.push(line.to_string());
        } else {
            headers.push(Header::parse(line)?);
        }
    }
    Ok((start, headers))
}

/// Splits a text holding several messages, each ended by a blank line.
pub fn split_messages(text: &str) -> Vec<String> {
    let normalized = text.replace("\r\n", "\n");
    normalized
        .split("\n\n")
        .map(|m| m.trim_start_matches('\n'))
        .filter(|m| !m.trim().is_empty())
        .map(|m| format!("{}\n\n", m.trim_end_matches('\n')))
        .collect()
}

/// Converts LF line endings to CRLF.
pub fn to_crlf(text: &str) -> String {
    text.replace("\r\n", "\n").replace('\n', "\r\n")
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamRequest {
    pub method: String,
    pub path: String,
    pub version: String,
    pub headers: Vec<Header>,
    pub range_start_s: u64,
    pub device_tag: Option<String>,
}

/// Parses `seconds=N-`.
pub fn parse_seconds_start(value: &str) -> Result<u64, ProtocolError> {
    let v = value.trim();
    let err = || ProtocolError::SecondsRange(value.to_string());
    let spec = v.strip_prefix("seconds=").ok_or_else(err)?;
    let start = spec.strip_suffix('-').ok_or_else(err)?;
    start.trim().parse().map_err(|_| err())
}

impl StreamRequest {
    /// A content request in the usual header order.
    pub fn new(path: &str, host: &str, range_start_s: u64, device_tag: Option<&str>) -> Self {
        let mut headers = vec![
            Header::new("Host", host),
            Header::new("Accept", "*/*"),
            Header::new("Range", format!("seconds={range_start_s}-")),
        ];
        if let Some(d) = device_tag {
            headers.push(Header::new("X-Device", d));
        }
        StreamRequest {
            method: "GET".into(),
            path: path.into(),
            version: "HTTP/1.1".into(),
            headers,
            range_start_s,
            device_tag: device_tag.map(str::to_string),
        }
    }

    pub fn header(&self, name: &str) -> Option<&Header> {
        find_header(&self.headers, name)
    }

    pub fn host(&self) -> Option<String> {
        self.header("Host").map(|h| h.full_value())
    }
}

pub fn parse_request(raw: &str) -> Result<StreamRequest, ProtocolError> {
    let (start, headers) = parse_head(raw)?;
    let parts: Vec<_> = start.split(' ').collect();
    let [method, path, version] = parts[..] else {
        return Err(ProtocolError::StartLine(start));
    };
    if !version.starts_with("HTTP/") {
        return Err(ProtocolError::StartLine(start));
    }
    let range = find_header(&headers, "Range").ok_or(ProtocolError::MissingHeader("Range"))?;
    let range_start_s = parse_seconds_start(&range.full_value())?;
    let device_tag = find_header(&headers, "X-Device").map(|h| h.full_value());
    Ok(StreamRequest {
        method: method.into(),
        path: path.into(),
        version: version.into(),
        headers,
        range_start_s,
        device_tag,
    })
}

pub fn render_request(req: &StreamRequest) -> String {
    let mut out = format!("{} {} {}\r\n", req.method, req.path, req.version);
    for h in &req.headers {
        h.render_into(&mut out);
    }
    out.push_str("\r\n");
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RangeUnit {
    Seconds,
    Bytes,
}

impl RangeUnit {
    fn as_str(self) -> &'static str {
        match self {
            RangeUnit::Seconds => "seconds",
            RangeUnit::Bytes => "bytes",
        }
    }
}

/// `unit a-b/len`, where `len` is the length of this chunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContentRange {
    pub unit: RangeUnit,
    pub start: u64,
    pub end: u64,
    pub len: u64,
}

impl ContentRange {
    pub fn new(unit: RangeUnit, start: u64, end: u64) -> Self {
        ContentRange { unit, start, end, len: end - start + 1 }
    }
}

impl fmt::Display for ContentRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}-{}/{}", self.unit.as_str(), self.start, self.end, self.len)
    }
}

impl FromStr for ContentRange {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ProtocolError::ContentRange(s.to_string());
        let s_trim = s.trim();
        let (unit, rest) = s_trim.split_once(' ').ok_or_else(err)?;
        let unit = match unit {
            "seconds" => RangeUnit::Seconds,
            "bytes" => RangeUnit::Bytes,
            _ => return Err(err()),
        };
        let (span, len) = rest.trim().split_once('/').ok_or_else(err)?;
        let (a, b) = span.split_once('-').ok_or_else(err)?;
        let start: u64 = a.trim().parse().map_err(|_| err())?;
        let end: u64 = b.trim().parse().map_err(|_| err())?;
        let len: u64 = len.trim().parse().map_err(|_| err())?;
        if end < start || len != end - start + 1 {
            return Err(err());
        }
        Ok(ContentRange { unit, start, end, len })
    }
}

/// `a-` or `a-b` in stream-info seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SecondsSpan {
    pub start: u64,
    pub end: Option<u64>,
}

impl fmt::Display for SecondsSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.end {
            Some(e) => write!(f, "{}-{}", self.start, e),
            None => write!(f, "{}-", self.start),
        }
    }
}

impl FromStr for SecondsSpan {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ProtocolError::SecondsRange(s.to_string());
        let (a, b) = s.trim().split_once('-').ok_or_else(err)?;
        let start = a.trim().parse().map_err(|_| err())?;
        let end = if b.trim().is_empty() { None } else { Some(b.trim().parse().map_err(|_| err())?) };
        Ok(SecondsSpan { start, end })
    }
}

/// Parsed `X-Stream-Info`; every key/value pair is kept in order.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamInfo {
    pub entries: Vec<(String, String)>,
    pub duration_s: Option<f64>,
    pub bitrate_bps: u64,
    pub seconds: Option<SecondsSpan>,
    pub height: Option<u32>,
    pub width: Option<u32>,
}

impl StreamInfo {
    pub fn new(duration_s: f64, bitrate_bps: u64, seconds: SecondsSpan, height: u32, width: u32) -> Self {
        let entries = vec![
            ("duration".into(), format_number(duration_s)),
            ("bitrate".into(), bitrate_bps.to_string()),
            ("seconds".into(), seconds.to_string()),
            ("height".into(), height.to_string()),
            ("width".into(), width.to_string()),
        ];
        StreamInfo { entries, duration_s: Some(duration_s), bitrate_bps, seconds: Some(seconds), height: Some(height), width: Some(width) }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// `k=v;` for every entry.
    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v};")).collect()
    }
}

fn format_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        v.to_string()
    }
}

impl FromStr for StreamInfo {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut entries = Vec::new();
        for part in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part.split_once('=').ok_or_else(|| ProtocolError::StreamInfo(part.into()))?;
            entries.push((k.trim().to_string(), v.trim().to_string()));
        }
        let field = |key: &str| entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.clone());
        let bad = |v: String| ProtocolError::StreamInfo(v);
        let bitrate_bps = field("bitrate").ok_or(ProtocolError::MissingBitrate)?.parse().map_err(|_| bad("bitrate".into()))?;
        let duration_s = field("duration").map(|v| v.parse().map_err(|_| bad(v))).transpose()?;
        let seconds = field("seconds").map(|v| v.parse()).transpose()?;
        let height = field("height").map(|v| v.parse().map_err(|_| bad(v))).transpose()?;
        let width = field("width").map(|v| v.parse().map_err(|_| bad(v))).transpose()?;
        Ok(StreamInfo { entries, duration_s, bitrate_bps, seconds, height, width })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamResponse {
    /// `HTTP/1.1` when the status line carries a version.
    pub version: Option<String>,
    pub status: u16,
    /// Everything after the status code, verbatim.
    pub reason: String,
    pub headers: Vec<Header>,
    pub content_type: Option<String>,
    pub content_length: Option<u64>,
    pub content_range: Option<ContentRange>,
    pub stream_info: Option<StreamInfo>,
}

impl StreamResponse {
    fn from_parts(version: Option<String>, status: u16, reason: String, headers: Vec<Header>) -> Result<Self, ProtocolError> {
        let content_type = find_header(&headers, "Content-Type").map(|h| h.full_value());
        let content_length = match find_header(&headers, "Content-Length") {
            Some(h) => Some(h.full_value().trim().parse().map_err(|_| ProtocolError::HeaderLine(h.value.clone()))?),
            None => None,
        };
        let content_range: Option<ContentRange> = find_header(&headers, "Content-Range").map(|h| h.full_value().parse()).transpose()?;
        let stream_info: Option<StreamInfo> = find_header(&headers, "X-Stream-Info").map(|h| h.full_value().parse()).transpose()?;
        if let (Some(cr), Some(info)) = (&content_range, &stream_info) {
            if cr.unit == RangeUnit::Seconds {
                let matches = info.seconds.is_some_and(|s| s.start == cr.start && s.end == Some(cr.end));
                if !matches {
                    return Err(ProtocolError::Inconsistent {
                        info: info.seconds.map_or("none".into(), |s| s.to_string()),
                        range: cr.to_string(),
                    });
                }
            }
        }
        Ok(StreamResponse { version, status, reason, headers, content_type, content_length, content_range, stream_info })
    }

    fn build(status: u16, reason: &str, headers: Vec<Header>) -> Self {
        Self::from_parts(Some("HTTP/1.1".into()), status, reason.into(), headers).expect("well-formed generated response")
    }

    /// 200 carrying the initialization header of a quality.
    pub fn init(init_bytes: u64, info: &StreamInfo) -> Self {
        Self::build(
            200,
            "OK",
            vec![
                Header::new("Content-Type", "video/mp4"),
                Header::new("Content-Length", init_bytes.to_string()),
                Header::new("Content-Range", ContentRange::new(RangeUnit::Bytes, 0, init_bytes - 1).to_string()),
                Header::new("X-Stream-Info", info.render()),
            ],
        )
    }

    /// 200 (first chunk) or 206 with `bytes` of content covering `range`.
    pub fn content(first: bool, bytes: u64, range: ContentRange, info: &StreamInfo) -> Self {
        let (status, reason) = if first { (200, "OK") } else { (206, "Partial Content") };
        Self::build(
            status,
            reason,
            vec![
                Header::new("Content-Type", "video/mp4"),
                Header::new("Content-Length", bytes.to_string()),
                Header::new("Content-Range", range.to_string()),
                Header::new("X-Stream-Info", info.render()),
            ],
        )
    }

    /// 204 whose stream info states what the previous response really
    /// delivered.
    pub fn correction(info: &StreamInfo) -> Self {
        Self::build(204, "No Content", vec![Header::new("X-Stream-Info", info.render())])
    }

    pub fn header(&self, name: &str) -> Option<&Header> {
        find_header(&self.headers, name)
    }

    pub fn body_len(&self) -> u64 {
        if self.status == 204 {
            0
        } else {
            self.content_length.unwrap_or(0)
        }
    }
}

pub fn parse_response(raw: &str) -> Result<StreamResponse, ProtocolError> {
    let (start, headers) = parse_head(raw)?;
    let (version, rest) = match start.split_once(' ') {
        Some((v, rest)) if v.starts_with("HTTP/") => (Some(v.to_string()), rest.to_string()),
        _ => (None, start.clone()),
    };
    let (code, reason) = rest.split_once(' ').unwrap_or((rest.as_str(), ""));
    let status: u16 = code.parse().map_err(|_| ProtocolError::StartLine(start.clone()))?;
    if status == 200 || status == 206 || status == 204 {
        if find_header(&headers, "X-Stream-Info").is_none() {
            return Err(ProtocolError::MissingHeader("X-Stream-Info"));
        }
    }
    StreamResponse::from_parts(version, status, reason.to_string(), headers)
}

pub fn render_response(resp: &StreamResponse) -> String {
    let mut out = String::new();
    if let Some(v) = &resp.version {
        out.push_str(v);
        out.push(' ');
    }
    out.push_str(&resp.status.to_string());
    if !resp.reason.is_empty() {
        out.push(' ');
        out.push_str(&resp.reason);
    }
    out.push_str("\r\n");
    for h in &resp.headers {
        h.render_into(&mut out);
    }
    out.push_str("\r\n");
    out
}

/// One encoding served by [`StreamServer`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServedQuality {
    pub bitrate_bps: u64,
    pub init_bytes: u64,
    pub height: u32,
    pub width: u32,
}

/// Server side of the seconds-range exchange for one client session.
#[derive(Debug, Clone)]
pub struct StreamServer {
    pub duration_s: u64,
    pub qualities: Vec<ServedQuality>,
    current: Option<usize>,
    /// Last second covered by a content response so far.
    delivered_end: Option<u64>,
    /// Last response's announced span, for corrections after aborts.
    announced: Option<(u64, u64)>,
    /// Actual end when the last response was cut short.
    truncated_end: Option<u64>,
    sent_first_content: bool,
}

impl StreamServer {
    pub fn new(duration_s: u64, qualities: Vec<ServedQuality>) -> Self {
        StreamServer {
            duration_s,
            qualities,
            current: None,
            delivered_end: None,
            announced: None,
            truncated_end: None,
            sent_first_content: false,
        }
    }

    fn info(&self, q: usize, span: SecondsSpan) -> StreamInfo {
        let quality = &self.qualities[q];
        StreamInfo::new(self.duration_s as f64, quality.bitrate_bps, span, quality.height, quality.width)
    }

    /// Answers `req` with `seconds` of content at quality `q`. A change of
    /// quality first yields the new initialization header; the client then
    /// repeats its request.
    pub fn respond(&mut self, req: &StreamRequest, q: usize, seconds: u64) -> StreamResponse {
        if let (Some((a, _)), Some(real_end)) = (self.announced, self.truncated_end.take()) {
            let cur = self.current.unwrap_or(q);
            self.announced = Some((a, real_end));
            self.delivered_end = Some(real_end);
            return StreamResponse::correction(&self.info(cur, SecondsSpan { start: a, end: Some(real_end) }));
        }
        let start = match self.delivered_end {
            Some(end) => req.range_start_s.max(end + 1),
            None => req.range_start_s,
        };
        if self.current != Some(q) {
            self.current = Some(q);
            let init = self.qualities[q].init_bytes;
            return StreamResponse::init(init, &self.info(q, SecondsSpan { start, end: None }));
        }
        let end = (start + seconds.max(1) - 1).min(self.duration_s.saturating_sub(1)).max(start);
        let bytes = (end - start + 1) * self.qualities[q].bitrate_bps / 8;
        let first = !self.sent_first_content;
        self.sent_first_content = true;
        self.delivered_end = Some(end);
        self.announced = Some((start, end));
        let span = SecondsSpan { start, end: Some(end) };
        StreamResponse::content(first, bytes, ContentRange::new(RangeUnit::Seconds, start, end), &self.info(q, span))
    }

    /// Records that the last content response was cut after `bytes` of its
    /// body; the next request gets a 204 correction.
    pub fn abort_after(&mut self, bytes: u64) {
        if let (Some((a, b)), Some(q)) = (self.announced, self.current) {
            let secs = bytes * 8 / self.qualities[q].bitrate_bps;
            if secs == 0 {
                self.delivered_end = a.checked_sub(1);
                self.announced = None;
                return;
            }
            let real_end = a + secs - 1;
            if real_end < b {
                self.truncated_end = Some(real_end);
            }
        }
    }
}

/// Client side: issues requests when the buffer runs low and re-anchors
/// after corrections.
#[derive(Debug, Clone)]
pub struct ReferenceClient {
    pub path: String,
    pub host: String,
    pub device_tag: Option<String>,
    /// Request more content once this much remains buffered.
    pub low_water_s: f64,
    next_start: u64,
}

impl ReferenceClient {
    pub fn new(path: &str, host: &str, device_tag: Option<&str>) -> Self {
        ReferenceClient { path: path.into(), host: host.into(), device_tag: device_tag.map(str::to_string), low_water_s: 5.0, next_start: 0 }
    }

    pub fn next_start_s(&self) -> u64 {
        self.next_start
    }

    pub fn should_request(&self, buffered_s: f64) -> bool {
        buffered_s <= self.low_water_s
    }

    pub fn request(&self) -> StreamRequest {
        StreamRequest::new(&self.path, &self.host, self.next_start, self.device_tag.as_deref())
    }

    /// Updates the next range start from a response of which `body_bytes`
    /// actually arrived.
    pub fn on_response(&mut self, resp: &StreamResponse, body_bytes: u64) {
        let Some(info) = &resp.stream_info else { return };
        match resp.status {
            204 => {
                if let Some(SecondsSpan { end: Some(e), .. }) = info.seconds {
                    self.next_start = e + 1;
                }
            }
            200 | 206 => {
                if let Some(cr) = resp.content_range.filter(|c| c.unit == RangeUnit::Seconds) {
                    let full = resp.content_length.unwrap_or(0);
                    if body_bytes >= full {
                        self.next_start = cr.end + 1;
                    } else {
                        self.next_start = cr.start + body_bytes * 8 / info.bitrate_bps;
                    }
                }
            }
            _ => {}
        }
    }
}
