//! Minimal JSON-over-HTTP client shared by the remote scorer and the remote
//! query service.

use serde_json::Value;
use std::time::Duration;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum HttpFailure {
    /// Connection failure, timeout, or a 429/5xx answer.
    Unavailable { retry_after: Option<Duration>, message: String },
    /// Any other non-success status or an undecodable body.
    Rejected(String),
}

#[derive(Debug, Clone)]
pub(crate) struct JsonClient {
    agent: ureq::Agent,
    endpoint: String,
    token: Option<String>,
}

impl JsonClient {
    pub(crate) fn new(endpoint: impl Into<String>, token: Option<String>, timeout: Duration) -> Self {
        let agent =
            ureq::Agent::config_builder().http_status_as_error(false).timeout_global(Some(timeout)).build().into();
        JsonClient { agent, endpoint: endpoint.into(), token }
    }

    pub(crate) fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub(crate) fn post(&self, body: &Value) -> Result<Value, HttpFailure> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = req
            .content_type("application/json")
            .send(body.to_string())
            .map_err(|e| HttpFailure::Unavailable { retry_after: None, message: e.to_string() })?;
        let status = resp.status().as_u16();
        if status == 429 || (500..600).contains(&status) {
            let retry_after = resp
                .headers()
                .get("retry-after")
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<u64>().ok())
                .map(Duration::from_secs);
            return Err(HttpFailure::Unavailable { retry_after, message: format!("HTTP {status}") });
        }
        if !(200..300).contains(&status) {
            return Err(HttpFailure::Rejected(format!("HTTP {status}")));
        }
        let text = resp.body_mut().read_to_string().map_err(|e| HttpFailure::Rejected(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| HttpFailure::Rejected(e.to_string()))
    }
}

#[cfg(test)]
pub(crate) mod testing {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::thread::JoinHandle;

    /// Status, extra headers, body.
    pub(crate) type Canned = (u16, Vec<(&'static str, String)>, String);

    /// Serves one canned HTTP response per entry, returning the request bodies.
    pub(crate) fn serve(responses: Vec<Canned>) -> (String, JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1", listener.local_addr().unwrap());
        let h = std::thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, headers, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut r = BufReader::new(stream);
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    r.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                r.read_exact(&mut buf).unwrap();
                bodies.push(String::from_utf8(buf).unwrap());
                let mut s = r.into_inner();
                let mut head = format!("HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n", body.len());
                for (k, v) in headers {
                    head.push_str(&format!("{k}: {v}\r\n"));
                }
                s.write_all(format!("{head}\r\n{body}").as_bytes()).unwrap();
            }
            bodies
        });
        (url, h)
    }
}
