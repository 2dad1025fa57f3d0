//! Runs in its own binary so setting the process environment cannot leak
//! into other tests.

mod common;

use std::time::Duration;

use common::Stub;
use exemvad_core::backend::API_KEY_ENV;
use exemvad_core::textdist::{EmbedBackend, HttpEmbedder};

#[test]
fn api_key_is_read_from_the_environment() {
    std::env::set_var(API_KEY_ENV, "env-secret");
    let stub = Stub::start(vec![(200, r#"{"dim": 1, "vectors": [[1.0]]}"#.into())]);
    let embedder = HttpEmbedder::new(&stub.url, Duration::from_secs(5));
    embedder.embed_raw(&["x"]).unwrap();
    let got = stub.finish();
    assert_eq!(got[0].header("authorization"), Some("Bearer env-secret"));
    std::env::remove_var(API_KEY_ENV);
}
