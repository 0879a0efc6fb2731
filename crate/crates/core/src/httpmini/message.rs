use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HttpError {
    #[error("header block not terminated")]
    Incomplete,
    #[error("malformed status line: {0:?}")]
    BadStatusLine(String),
    #[error("malformed request line: {0:?}")]
    BadRequestLine(String),
    #[error("malformed header line: {0:?}")]
    BadHeader(String),
    #[error("unsupported method {0}")]
    UnsupportedMethod(String),
    #[error("{0} redirect without Location")]
    RedirectWithoutLocation(u16),
    #[error("bad Content-Length {0:?}")]
    BadContentLength(String),
    #[error("bad uri {0:?}")]
    BadUri(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Headers(pub Vec<(String, String)>);

impl Headers {
    pub fn get(&self, name: &str) -> Option<&str> {
        self.0.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
    }

    pub fn set(&mut self, name: &str, value: impl Into<String>) {
        let value = value.into();
        match self.0.iter_mut().find(|(k, _)| k.eq_ignore_ascii_case(name)) {
            Some(slot) => slot.1 = value,
            None => self.0.push((name.to_string(), value)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpRequest {
    pub method: String,
    pub path: String,
    pub headers: Headers,
}

impl HttpRequest {
    pub fn get(host: &str, path: &str) -> Self {
        let mut headers = Headers::default();
        headers.set("Host", host);
        HttpRequest { method: "GET".into(), path: path.into(), headers }
    }

    pub fn with_cookie(mut self, cookie: &str) -> Self {
        self.headers.set("Cookie", cookie);
        self
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("{} {} HTTP/1.1\r\n", self.method, self.path);
        for (k, v) in &self.headers.0 {
            out.push_str(&format!("{k}: {v}\r\n"));
        }
        out.push_str("\r\n");
        out.into_bytes()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub reason: String,
    pub headers: Headers,
    pub body: Vec<u8>,
}

impl HttpResponse {
    pub fn new(status: u16, reason: &str, body: impl Into<Vec<u8>>) -> Self {
        let body = body.into();
        let mut headers = Headers::default();
        headers.set("Content-Type", "text/html");
        headers.set("Content-Length", body.len().to_string());
        headers.set("Connection", "close");
        HttpResponse { status, reason: reason.into(), headers, body }
    }

    pub fn ok(body: impl Into<Vec<u8>>) -> Self {
        Self::new(200, "OK", body)
    }

    pub fn not_found() -> Self {
        Self::new(404, "Not Found", b"<html><body>404</body></html>".to_vec())
    }

    pub fn redirect(status: u16, location: &str) -> Self {
        let reason = if status == 302 { "Found" } else { "Moved Permanently" };
        let mut r = Self::new(status, reason, Vec::new());
        r.headers.set("Location", location);
        r
    }

    pub fn is_redirect(&self) -> bool {
        matches!(self.status, 301 | 302)
    }

    pub fn location(&self) -> Option<&str> {
        self.headers.get("Location")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("HTTP/1.1 {} {}\r\n", self.status, self.reason);
        for (k, v) in &self.headers.0 {
            out.push_str(&format!("{k}: {v}\r\n"));
        }
        out.push_str("\r\n");
        let mut bytes = out.into_bytes();
        bytes.extend_from_slice(&self.body);
        bytes
    }
}

/// Result of parsing a response from a byte stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedResponse {
    pub response: HttpResponse,
    /// Bytes after the header block (body plus anything beyond it).
    pub trailing: Vec<u8>,
    /// Declared Content-Length disagrees with the bytes present.
    pub content_length_mismatch: bool,
    /// Declared body fully present.
    pub complete: bool,
}

fn split_head(bytes: &[u8]) -> Result<(&str, &[u8]), HttpError> {
    let end = bytes.windows(4).position(|w| w == b"\r\n\r\n").ok_or(HttpError::Incomplete)?;
    let head = std::str::from_utf8(&bytes[..end]).map_err(|_| HttpError::BadHeader("non-utf8".into()))?;
    Ok((head, &bytes[end + 4..]))
}

fn parse_headers<'a>(lines: impl Iterator<Item = &'a str>) -> Result<Headers, HttpError> {
    let mut headers = Headers::default();
    for line in lines {
        let (k, v) = line.split_once(':').ok_or_else(|| HttpError::BadHeader(line.to_string()))?;
        headers.0.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(headers)
}

pub fn parse_request(bytes: &[u8]) -> Result<(HttpRequest, usize), HttpError> {
    let (head, rest) = split_head(bytes)?;
    let mut lines = head.split("\r\n");
    let line = lines.next().unwrap_or_default();
    let parts: Vec<&str> = line.split(' ').collect();
    if parts.len() != 3 || parts[2] != "HTTP/1.1" {
        return Err(HttpError::BadRequestLine(line.to_string()));
    }
    if parts[0] != "GET" {
        return Err(HttpError::UnsupportedMethod(parts[0].to_string()));
    }
    let headers = parse_headers(lines)?;
    let consumed = bytes.len() - rest.len();
    Ok((HttpRequest { method: parts[0].into(), path: parts[1].into(), headers }, consumed))
}

pub fn parse_response(bytes: &[u8]) -> Result<ParsedResponse, HttpError> {
    if !bytes.starts_with(b"HTTP/1.1 ") {
        let shown = String::from_utf8_lossy(&bytes[..bytes.len().min(20)]).into_owned();
        return Err(HttpError::BadStatusLine(shown));
    }
    let (head, rest) = split_head(bytes)?;
    let mut lines = head.split("\r\n");
    let line = lines.next().unwrap_or_default();
    let mut parts = line.splitn(3, ' ');
    let _version = parts.next();
    let status = parts
        .next()
        .and_then(|s| (s.len() == 3).then_some(s))
        .and_then(|s| s.parse::<u16>().ok())
        .ok_or_else(|| HttpError::BadStatusLine(line.to_string()))?;
    let reason = parts.next().unwrap_or_default().to_string();
    let headers = parse_headers(lines)?;

    let declared = match headers.get("Content-Length") {
        Some(v) => Some(v.parse::<usize>().map_err(|_| HttpError::BadContentLength(v.to_string()))?),
        None => None,
    };
    let (body, complete, mismatch) = match declared {
        Some(n) => (rest[..n.min(rest.len())].to_vec(), rest.len() >= n, rest.len() != n),
        None => (rest.to_vec(), true, false),
    };
    let response = HttpResponse { status, reason, headers, body };
    if response.is_redirect() && response.location().is_none() {
        return Err(HttpError::RedirectWithoutLocation(status));
    }
    Ok(ParsedResponse { response, trailing: rest.to_vec(), content_length_mismatch: mismatch, complete })
}

/// `http://host[:port]/path`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Uri {
    pub host: String,
    pub port: u16,
    pub path: String,
}

impl Uri {
    pub fn parse(s: &str) -> Result<Uri, HttpError> {
        let rest = s.strip_prefix("http://").ok_or_else(|| HttpError::BadUri(s.to_string()))?;
        let (authority, path) = match rest.find('/') {
            Some(i) => (&rest[..i], &rest[i..]),
            None => (rest, "/"),
        };
        let (host, port) = match authority.rsplit_once(':') {
            Some((h, p)) => (h, p.parse().map_err(|_| HttpError::BadUri(s.to_string()))?),
            None => (authority, 80),
        };
        if host.is_empty() {
            return Err(HttpError::BadUri(s.to_string()));
        }
        Ok(Uri { host: host.into(), port, path: path.into() })
    }
}

impl fmt::Display for Uri {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.port == 80 {
            write!(f, "http://{}{}", self.host, self.path)
        } else {
            write!(f, "http://{}:{}{}", self.host, self.port, self.path)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_wire_form() {
        let r = HttpRequest::get("10.0.0.2", "/").with_cookie("session=abc");
        assert_eq!(r.to_bytes(), b"GET / HTTP/1.1\r\nHost: 10.0.0.2\r\nCookie: session=abc\r\n\r\n");
        let (parsed, used) = parse_request(&r.to_bytes()).unwrap();
        assert_eq!(parsed, r);
        assert_eq!(used, r.to_bytes().len());
    }

    #[test]
    fn response_roundtrip() {
        let r = HttpResponse::ok(b"ok".to_vec());
        let p = parse_response(&r.to_bytes()).unwrap();
        assert_eq!(p.response, r);
        assert!(p.complete && !p.content_length_mismatch);
    }

    #[test]
    fn concatenated_bytes_flag_mismatch() {
        let mut bytes = HttpResponse::ok(b"forged".to_vec()).to_bytes();
        bytes.extend_from_slice(b"legitimate tail");
        let p = parse_response(&bytes).unwrap();
        assert!(p.content_length_mismatch);
        assert_eq!(p.response.body, b"forged");
        assert_eq!(p.trailing, b"forgedlegitimate tail");
    }

    #[test]
    fn redirect_requires_location() {
        let mut r = HttpResponse::redirect(301, "http://10.0.0.66/");
        assert_eq!(parse_response(&r.to_bytes()).unwrap().response.location(), Some("http://10.0.0.66/"));
        r.headers.0.retain(|(k, _)| k != "Location");
        assert_eq!(parse_response(&r.to_bytes()), Err(HttpError::RedirectWithoutLocation(301)));
    }

    #[test]
    fn malformed_inputs() {
        assert!(matches!(parse_response(b"HTTP/1.0 200 OK\r\n\r\n"), Err(HttpError::BadStatusLine(_))));
        assert!(matches!(parse_response(b"HTTP/1.1 abc OK\r\n\r\n"), Err(HttpError::BadStatusLine(_))));
        assert_eq!(parse_response(b"HTTP/1.1 200 OK\r\nContent-Length: 2\r\n"), Err(HttpError::Incomplete));
        assert!(matches!(parse_request(b"POST / HTTP/1.1\r\n\r\n"), Err(HttpError::UnsupportedMethod(_))));
    }

    #[test]
    fn uri_parsing() {
        let u = Uri::parse("http://10.0.0.66:8080/evil").unwrap();
        assert_eq!((u.host.as_str(), u.port, u.path.as_str()), ("10.0.0.66", 8080, "/evil"));
        assert_eq!(Uri::parse("http://web").unwrap().to_string(), "http://web/");
        assert!(Uri::parse("ftp://x/").is_err());
    }
}
