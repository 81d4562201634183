use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::Args;
use pano_rating::{RatingService, ServiceConfig, TOKEN_ENV};

use crate::images::create_out_dir;
use crate::manifest::RunManifest;

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Directory holding pools and session logs; created if missing.
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Listen address; port 0 picks a free port.
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
}

pub fn run(args: &ServeArgs, argv: &[String]) -> Result<()> {
    let token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
    if token.is_none() {
        log::warn!("{TOKEN_ENV} is unset; the API accepts unauthenticated requests");
    }
    create_out_dir(&args.data_dir)?;
    let svc = Arc::new(RatingService::open(ServiceConfig {
        data_dir: args.data_dir.clone(),
        token: token.clone(),
    })?);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting async runtime")?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&args.addr)
            .await
            .with_context(|| format!("binding {}", args.addr))?;
        let local = listener.local_addr()?;
        let config = serde_json::json!({"addr": local.to_string(), "authenticated": token.is_some()});
        let mut run = RunManifest::new("serve", argv, None, config);
        run.add_output(&args.data_dir);
        run.write(&args.data_dir)?;
        // scripts read this line to find the port
        println!("listening on http://{local}");
        std::io::stdout().flush()?;
        pano_rating::serve(listener, svc, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .context("serving")?;
        log::info!("shut down");
        Ok(())
    })
}
