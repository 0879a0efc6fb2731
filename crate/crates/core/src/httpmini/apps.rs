use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use super::message::{parse_request, parse_response, HttpRequest, HttpResponse, Uri};
use crate::simnet::SimTime;
use crate::tcpstack::{App, AppEvent, AppIo, CloseReason, Command, ConnId};

pub const HTTP_PORT: u16 = 80;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerLogEntry {
    pub time: SimTime,
    pub conn: ConnId,
    pub method: String,
    pub path: String,
    pub status: u16,
}

/// Serves fixed routes, answering each GET after an artificial delay and
/// closing the connection behind the response.
#[derive(Debug, Clone)]
pub struct HttpServer {
    pub port: u16,
    pub routes: BTreeMap<String, HttpResponse>,
    pub delay: SimTime,
    pub log: Vec<ServerLogEntry>,
    buffers: BTreeMap<ConnId, Vec<u8>>,
    /// Connections with a response still being prepared; a half-close from
    /// the client must not cut these short.
    answering: BTreeSet<ConnId>,
}

impl HttpServer {
    pub fn new(routes: BTreeMap<String, HttpResponse>, delay: SimTime) -> Self {
        HttpServer { port: HTTP_PORT, routes, delay, log: Vec::new(), buffers: BTreeMap::new(), answering: BTreeSet::new() }
    }

    pub fn single_page(body: &str, delay: SimTime) -> Self {
        Self::new(BTreeMap::from([("/".to_string(), HttpResponse::ok(body.as_bytes().to_vec()))]), delay)
    }
}

impl App for HttpServer {
    fn start(&mut self, io: &mut AppIo) {
        io.listen(self.port);
    }

    fn on_event(&mut self, io: &mut AppIo, conn: ConnId, event: AppEvent) {
        match event {
            AppEvent::Data(bytes) => {
                let buf = self.buffers.entry(conn).or_default();
                buf.extend_from_slice(&bytes);
                let Ok((request, used)) = parse_request(buf) else { return };
                buf.drain(..used);
                let response = self.routes.get(&request.path).cloned().unwrap_or_else(HttpResponse::not_found);
                self.log.push(ServerLogEntry {
                    time: io.now(),
                    conn,
                    method: request.method,
                    path: request.path,
                    status: response.status,
                });
                self.answering.insert(conn);
                io.defer(self.delay, Command::Send { conn, data: response.to_bytes(), push: true, fin: true });
            }
            AppEvent::PeerClosed if !self.answering.contains(&conn) => io.close(conn),
            AppEvent::Closed(_) => {
                self.buffers.remove(&conn);
                self.answering.remove(&conn);
            }
            _ => {}
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConnectionOutcome {
    ClosedByFin,
    TimedOut,
    #[default]
    Open,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClientView {
    /// Every accepted byte after the header block of the final response.
    pub rendered_body: Vec<u8>,
    pub followed_redirects: Vec<String>,
    pub connection_outcome: ConnectionOutcome,
    pub status: Option<u16>,
    pub content_length_mismatch: bool,
}

pub const MAX_REDIRECTS: usize = 5;

const TIMER_NO_RESPONSE: u64 = 1;

/// Browser stand-in: GETs one URI, renders what arrives first, follows
/// redirects.
#[derive(Debug, Clone)]
pub struct HttpClient {
    pub start_uri: Uri,
    pub cookie: Option<String>,
    pub resolver: BTreeMap<String, Ipv4Addr>,
    pub start_at: SimTime,
    pub response_timeout: SimTime,
    pub view: ClientView,
    current: Option<(ConnId, Uri)>,
    received: Vec<u8>,
    redirected: bool,
}

impl HttpClient {
    pub fn new(uri: Uri, resolver: BTreeMap<String, Ipv4Addr>) -> Self {
        HttpClient {
            start_uri: uri,
            cookie: None,
            resolver,
            start_at: SimTime::from_millis(10),
            response_timeout: SimTime::from_secs(10),
            view: ClientView::default(),
            current: None,
            received: Vec::new(),
            redirected: false,
        }
    }

    fn resolve(&self, host: &str) -> Option<Ipv4Addr> {
        host.parse().ok().or_else(|| self.resolver.get(host).copied())
    }

    fn navigate(&mut self, io: &mut AppIo, uri: Uri) {
        let Some(ip) = self.resolve(&uri.host) else {
            self.view.connection_outcome = ConnectionOutcome::TimedOut;
            return;
        };
        let conn = io.connect(ip, uri.port);
        self.current = Some((conn, uri));
        self.received.clear();
        self.redirected = false;
        self.view.rendered_body.clear();
        self.view.status = None;
        self.view.content_length_mismatch = false;
        self.view.connection_outcome = ConnectionOutcome::Open;
    }

    fn is_current(&self, conn: ConnId) -> bool {
        self.current.as_ref().is_some_and(|(c, _)| *c == conn)
    }

    fn update_view(&mut self, io: &mut AppIo, conn: ConnId) {
        let Ok(parsed) = parse_response(&self.received) else { return };
        self.view.status = Some(parsed.response.status);
        self.view.rendered_body = parsed.trailing.clone();
        self.view.content_length_mismatch = parsed.content_length_mismatch;
        if !parsed.complete || self.redirected || !parsed.response.is_redirect() {
            return;
        }
        if self.view.followed_redirects.len() >= MAX_REDIRECTS {
            return;
        }
        let Some(target) = parsed.response.location().and_then(|l| Uri::parse(l).ok()) else { return };
        self.redirected = true;
        self.view.followed_redirects.push(target.to_string());
        io.close(conn);
        self.navigate(io, target);
    }
}

impl App for HttpClient {
    fn start(&mut self, io: &mut AppIo) {
        io.set_timer(self.start_at, 0);
    }

    fn on_timer(&mut self, io: &mut AppIo, token: u64) {
        if token == 0 {
            let uri = self.start_uri.clone();
            self.navigate(io, uri);
            io.set_timer(self.response_timeout, TIMER_NO_RESPONSE);
        } else if token == TIMER_NO_RESPONSE && self.view.status.is_none() {
            if let Some((conn, _)) = self.current.take() {
                io.abort_silently(conn, CloseReason::Timeout);
            }
            self.view.connection_outcome = ConnectionOutcome::TimedOut;
        }
    }

    fn on_event(&mut self, io: &mut AppIo, conn: ConnId, event: AppEvent) {
        if !self.is_current(conn) {
            return;
        }
        match event {
            AppEvent::Connected => {
                let uri = &self.current.as_ref().expect("current connection").1;
                let mut req = HttpRequest::get(&uri.host, &uri.path);
                if let Some(c) = &self.cookie {
                    req = req.with_cookie(c);
                }
                io.send(conn, req.to_bytes(), false);
            }
            AppEvent::Data(bytes) => {
                self.received.extend_from_slice(&bytes);
                self.update_view(io, conn);
            }
            AppEvent::PeerClosed => {
                self.view.connection_outcome = ConnectionOutcome::ClosedByFin;
                io.close(conn);
            }
            AppEvent::Closed(reason) => {
                if reason != CloseReason::Normal && self.view.connection_outcome == ConnectionOutcome::Open {
                    self.view.connection_outcome = ConnectionOutcome::TimedOut;
                }
            }
            AppEvent::Accepted(_) => {}
        }
    }
}
