use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use qol_impact::ingest::{fetch_remote, parse_requests, FetchConfig, IngestError, ParseMode};

const HEADER: &str = "Unique Key,Created Date,Agency,Complaint Type,Descriptor,Incident Zip,Borough";

struct Reply {
    status: u16,
    content_type: &'static str,
    body: String,
}

/// Serves one request per connection until the process exits. Returns the
/// base URL and a counter of requests served.
fn serve<F>(handler: F) -> (String, Arc<AtomicUsize>)
where
    F: Fn(&str) -> Reply + Send + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/resource.csv", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            if reader.read_line(&mut request_line).is_err() {
                continue;
            }
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
            }
            counter.fetch_add(1, Ordering::SeqCst);
            let target = request_line.split_whitespace().nth(1).unwrap_or("").to_string();
            let reply = handler(&target);
            let _ = write!(
                stream,
                "HTTP/1.1 {} X\r\nContent-Type: {}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                reply.status,
                reply.content_type,
                reply.body.len(),
                reply.body
            );
        }
    });
    (url, hits)
}

fn query_param(target: &str, name: &str) -> Option<usize> {
    let query = target.split_once('?')?.1;
    query.split('&').find_map(|kv| {
        let (k, v) = kv.split_once('=')?;
        let k = k.replace("%24", "$");
        (k == name).then(|| v.parse().ok()).flatten()
    })
}

fn rows(range: std::ops::Range<usize>) -> String {
    let mut body = format!("{HEADER}\n");
    for i in range {
        body.push_str(&format!("{i},5/11/17,DOB,Noise,Loud,10002,Manhattan\n"));
    }
    body
}

fn fast(url: &str) -> FetchConfig {
    FetchConfig {
        initial_backoff: Duration::from_millis(5),
        timeout: Duration::from_secs(10),
        ..FetchConfig::new(url)
    }
}

#[test]
fn pages_are_concatenated_under_one_header() {
    let (url, hits) = serve(|target| {
        let offset = query_param(target, "$offset").unwrap();
        let limit = query_param(target, "$limit").unwrap();
        let end = (offset + limit).min(1037);
        Reply {
            status: 200,
            content_type: "text/csv; charset=utf-8",
            body: rows(offset..end.max(offset)),
        }
    });
    let fetched = fetch_remote(&fast(&url)).unwrap();
    assert_eq!(fetched.rows, 1037);
    assert_eq!(fetched.pages, 2);
    assert_eq!(hits.load(Ordering::SeqCst), 2);
    let text = String::from_utf8(fetched.data.clone()).unwrap();
    assert_eq!(text.matches("Unique Key").count(), 1);
    let (parsed, report) = parse_requests(&fetched.data[..], ParseMode::Strict).unwrap();
    assert_eq!(parsed.len(), 1037);
    assert_eq!(report.rows_read, 1037);
    assert_eq!(parsed[1036].unique_key, "1036");
}

#[test]
fn server_errors_exhaust_retries() {
    let (url, hits) = serve(|_| Reply {
        status: 500,
        content_type: "text/plain",
        body: "boom".into(),
    });
    let err = fetch_remote(&fast(&url)).unwrap_err();
    assert!(matches!(err, IngestError::Network(_)), "{err:?}");
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn transient_error_then_success() {
    let (url, hits) = serve({
        let calls = AtomicUsize::new(0);
        move |_| {
            if calls.fetch_add(1, Ordering::SeqCst) == 0 {
                Reply {
                    status: 503,
                    content_type: "text/plain",
                    body: String::new(),
                }
            } else {
                Reply {
                    status: 200,
                    content_type: "text/csv",
                    body: rows(0..3),
                }
            }
        }
    });
    let fetched = fetch_remote(&fast(&url)).unwrap();
    assert_eq!(fetched.rows, 3);
    assert_eq!(hits.load(Ordering::SeqCst), 2);
}

#[test]
fn client_error_is_not_retried() {
    let (url, hits) = serve(|_| Reply {
        status: 404,
        content_type: "text/plain",
        body: String::new(),
    });
    assert!(matches!(fetch_remote(&fast(&url)), Err(IngestError::Network(_))));
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

#[test]
fn empty_result_is_header_only() {
    let (url, _) = serve(|_| Reply {
        status: 200,
        content_type: "text/csv",
        body: rows(0..0),
    });
    let fetched = fetch_remote(&fast(&url)).unwrap();
    assert_eq!(fetched.rows, 0);
    assert_eq!(String::from_utf8(fetched.data).unwrap(), format!("{HEADER}\n"));
}

#[test]
fn html_response_is_rejected() {
    let (url, _) = serve(|_| Reply {
        status: 200,
        content_type: "text/html",
        body: "<html></html>".into(),
    });
    assert!(matches!(fetch_remote(&fast(&url)), Err(IngestError::NonCsvResponse(_))));
}
