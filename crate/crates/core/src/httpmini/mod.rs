//! HTTP/1.1 subset: GET, Content-Length bodies, 301/302 redirects.

mod apps;
mod message;

pub use apps::{ClientView, ConnectionOutcome, HttpClient, HttpServer, ServerLogEntry, HTTP_PORT, MAX_REDIRECTS};
pub use message::{parse_request, parse_response, Headers, HttpError, HttpRequest, HttpResponse, ParsedResponse, Uri};
