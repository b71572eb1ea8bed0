//! Dataset download and verification.
//!
//! Downloads the binary archive, prints its SHA-256 (and checks it against
//! `--expect-sha256` when given), extracts it under the root, and
//! structurally verifies the result by loading both splits. When the files
//! are already present the download is skipped and only verification runs,
//! so the command is idempotent.

use semcom_core::data::{Dataset, Split};
use semcom_core::Error;
use sha2::{Digest, Sha256};
use std::io::Read;
use std::path::{Path, PathBuf};

const DEFAULT_URL: &str = "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz";

#[derive(clap::Args)]
pub struct FetchArgs {
    /// Directory to download into and extract under.
    #[arg(long)]
    root: PathBuf,
    /// Archive URL.
    #[arg(long, default_value = DEFAULT_URL)]
    url: String,
    /// Expected SHA-256 of the archive (hex). Without it the digest is
    /// printed for pinning.
    #[arg(long)]
    expect_sha256: Option<String>,
    /// Verify existing files only; never touch the network.
    #[arg(long)]
    verify_only: bool,
}

fn splits_load(root: &Path) -> Result<(usize, usize), Error> {
    let train = Dataset::load(root, Split::Train)?;
    let test = Dataset::load(root, Split::Test)?;
    Ok((train.len(), test.len()))
}

pub fn cmd_fetch(args: FetchArgs) -> Result<(), Error> {
    if let Ok((train, test)) = splits_load(&args.root) {
        println!(
            "dataset already present at {}: {train} train / {test} test images; nothing to fetch",
            args.root.display()
        );
        return Ok(());
    }
    if args.verify_only {
        // Surface the precise ingestion error.
        let (train, test) = splits_load(&args.root)?;
        println!("{train} train / {test} test images verified");
        return Ok(());
    }

    std::fs::create_dir_all(&args.root).map_err(|e| Error::io(&args.root, e))?;
    let archive_path = args.root.join("cifar-10-binary.tar.gz");
    if !archive_path.is_file() {
        eprintln!("downloading {} ...", args.url);
        let mut response = ureq::get(&args.url)
            .call()
            .map_err(|e| Error::Training(format!("download failed: {e}")))?;
        let mut reader = response.body_mut().as_reader();
        let tmp = archive_path.with_extension("part");
        let mut file = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        std::io::copy(&mut reader, &mut file).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &archive_path).map_err(|e| Error::io(&archive_path, e))?;
    } else {
        eprintln!("archive already downloaded: {}", archive_path.display());
    }

    let digest = sha256_file(&archive_path)?;
    println!("archive sha256 = {digest}");
    if let Some(expected) = &args.expect_sha256 {
        if !expected.eq_ignore_ascii_case(&digest) {
            return Err(Error::Training(format!(
                "archive checksum mismatch: expected {expected}, got {digest}"
            )));
        }
        println!("checksum matches");
    }

    eprintln!("extracting ...");
    let file = std::fs::File::open(&archive_path).map_err(|e| Error::io(&archive_path, e))?;
    let tar = flate2::read::GzDecoder::new(std::io::BufReader::new(file));
    tar::Archive::new(tar)
        .unpack(&args.root)
        .map_err(|e| Error::Training(format!("extraction failed: {e}")))?;

    let (train, test) = splits_load(&args.root)?;
    println!(
        "verified: {train} train / {test} test images under {}",
        args.root.display()
    );
    Ok(())
}

fn sha256_file(path: &Path) -> Result<String, Error> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 65536];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex_string(&hasher.finalize()))
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
