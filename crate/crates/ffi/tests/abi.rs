use std::collections::BTreeSet;
use std::ffi::{c_char, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use bilex_core::lexicon::Condition;
use bilex_core::model::{init_model, ModelConfig};
use bilex_core::synthetic::{generate, SyntheticConfig};
use bilex_core::workflow::{lexicon_stage, tokenizer_stage, TokenizerSizes};
use bilex_ffi::*;

struct Files {
    _dir: tempfile::TempDir,
    vocab: PathBuf,
    model: PathBuf,
    friend: String,
}

fn files() -> Files {
    let dir = tempfile::tempdir().unwrap();
    let syn = generate(&SyntheticConfig { sentences: [300, 150], friends: 4, false_friends: 2, ..Default::default() }).unwrap();
    let stores = [&syn.stores[0], &syn.stores[1]];
    let lex = lexicon_stage(stores, &[syn.annotations.clone()], &BTreeSet::new()).unwrap();
    let sizes = TokenizerSizes { vocab_size: 400, min_frequency: 2, ne_vocab_size: 270, ne_min_frequency: 1 };
    let vocabs = tokenizer_stage(stores, &lex, &sizes).unwrap();
    let b = &vocabs[Condition::ALL.iter().position(|c| *c == Condition::B).unwrap()];
    let vocab = dir.path().join("vocab_B.json");
    b.save(&vocab).unwrap();
    let cfg = ModelConfig {
        n_layers: 1,
        n_heads: 2,
        d_model: 16,
        d_ff: 32,
        context_length: 16,
        vocab_size: b.size(),
        dropout: 0.0,
        seed: 1,
        tied_embeddings: true,
    };
    let model = dir.path().join("model.blxc");
    init_model(&cfg).unwrap().save(&model).unwrap();
    let friend = syn.friends().next().unwrap().to_string();
    Files { _dir: dir, vocab, model, friend }
}

fn cpath(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let n = unsafe { bilex_last_error_message(ptr::null_mut(), 0) };
    let mut buf = vec![0 as c_char; n + 1];
    unsafe { bilex_last_error_message(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

unsafe fn encode(tok: *const BilexTokenizer, text: &str, lang: BilexLang) -> Vec<u32> {
    let text = CString::new(text).unwrap();
    let mut n = 0usize;
    let st = bilex_tokenizer_encode(tok, text.as_ptr(), lang, ptr::null_mut(), 0, &mut n);
    if n == 0 {
        assert_eq!(st, BilexStatus::Ok);
        return Vec::new();
    }
    assert_eq!(st, BilexStatus::BufferTooSmall);
    let mut ids = vec![0u32; n];
    assert_eq!(bilex_tokenizer_encode(tok, text.as_ptr(), lang, ids.as_mut_ptr(), n, &mut n), BilexStatus::Ok);
    ids
}

#[test]
fn tokenizer_round_trips_through_the_c_interface() {
    let f = files();
    unsafe {
        let mut tok = ptr::null_mut();
        assert_eq!(bilex_tokenizer_load(cpath(&f.vocab).as_ptr(), &mut tok), BilexStatus::Ok);
        assert!(!tok.is_null());
        assert!(bilex_tokenizer_vocab_size(tok) > 256);

        let text = format!("de {} is héél mooi .", f.friend);
        let ids = encode(tok, &text, BilexLang::L2);
        assert!(!ids.is_empty());
        let mut len = 0usize;
        assert_eq!(
            bilex_tokenizer_decode(tok, ids.as_ptr(), ids.len(), ptr::null_mut(), 0, &mut len),
            BilexStatus::BufferTooSmall
        );
        assert!(last_error().contains("needed"));
        let mut buf = vec![0u8; len];
        assert_eq!(bilex_tokenizer_decode(tok, ids.as_ptr(), ids.len(), buf.as_mut_ptr(), len, &mut len), BilexStatus::Ok);
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), text);
        assert_eq!(last_error(), "");

        // Friends are shared in condition B, so both languages use one id.
        let a = encode(tok, &f.friend, BilexLang::L1);
        let b = encode(tok, &f.friend, BilexLang::L2);
        assert_eq!(a.len(), 1);
        assert_eq!(a, b);

        let bad = [u32::MAX];
        assert_eq!(bilex_tokenizer_decode(tok, bad.as_ptr(), 1, buf.as_mut_ptr(), 0, &mut len), BilexStatus::Tokenizer);
        bilex_tokenizer_free(tok);
    }
}

#[test]
fn model_surprisal_matches_the_core_library() {
    let f = files();
    let core = bilex_core::model::ModelCheckpoint::load(&f.model).unwrap();
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(bilex_model_load(cpath(&f.model).as_ptr(), &mut m), BilexStatus::Ok);
        assert_eq!(bilex_model_vocab_size(m), core.config.vocab_size);
        assert_eq!(bilex_model_context_length(m), 16);
        let ctx = [0u32, 5, 9];
        let mut bits = 0.0;
        assert_eq!(bilex_model_surprisal(m, ctx.as_ptr(), ctx.len(), 7, &mut bits), BilexStatus::Ok);
        let want = -core.next_log_probs(&ctx).unwrap()[7] / std::f64::consts::LN_2;
        assert_eq!(bits, want);

        let mut loss = 0.0;
        assert_eq!(bilex_model_loss(m, ctx.as_ptr(), ctx.len(), &mut loss), BilexStatus::Ok);
        assert_eq!(loss, core.loss(&[&ctx]).unwrap());

        let v = core.config.vocab_size as u32;
        assert_eq!(bilex_model_surprisal(m, ctx.as_ptr(), 3, v, &mut bits), BilexStatus::InvalidArgument);
        assert_eq!(bilex_model_surprisal(m, ctx.as_ptr(), 0, 1, &mut bits), BilexStatus::InvalidArgument);
        let long = vec![1u32; 40];
        assert_eq!(bilex_model_surprisal(m, long.as_ptr(), long.len(), 1, &mut bits), BilexStatus::Model);
        assert!(last_error().contains("context"), "{}", last_error());
        bilex_model_free(m);
    }
}

#[test]
fn errors_are_reported_by_code_and_message() {
    unsafe {
        let mut tok = ptr::null_mut();
        let missing = CString::new("/nonexistent/vocab.json").unwrap();
        assert_eq!(bilex_tokenizer_load(missing.as_ptr(), &mut tok), BilexStatus::Io);
        assert!(tok.is_null());
        assert!(last_error().contains("/nonexistent/vocab.json"));

        assert_eq!(bilex_tokenizer_load(ptr::null(), &mut tok), BilexStatus::NullArgument);
        assert_eq!(last_error(), "path is null");

        let dir = tempfile::tempdir().unwrap();
        let junk = dir.path().join("junk.blxc");
        std::fs::write(&junk, b"not a checkpoint").unwrap();
        let mut m = ptr::null_mut();
        assert_eq!(bilex_model_load(cpath(&junk).as_ptr(), &mut m), BilexStatus::Format);
        assert!(m.is_null());

        let invalid = [0xffu8 as c_char, 0];
        assert_eq!(bilex_tokenizer_load(invalid.as_ptr(), &mut tok), BilexStatus::InvalidUtf8);

        // Truncated copies stay NUL-terminated.
        let mut small = [1 as c_char; 5];
        let full = bilex_last_error_message(small.as_mut_ptr(), small.len());
        assert!(full > 4);
        assert_eq!(small[4], 0);

        bilex_tokenizer_free(ptr::null_mut());
        bilex_model_free(ptr::null_mut());
        assert_eq!(bilex_tokenizer_vocab_size(ptr::null()), 0);
    }
}

#[test]
fn chi_square_p_value() {
    unsafe {
        let mut p = 0.0;
        assert_eq!(bilex_chi2_p_value(4.49, 1, &mut p), BilexStatus::Ok);
        assert!((p - 0.0341).abs() < 1e-3, "{p}");
        assert_eq!(bilex_chi2_p_value(1.0, 0, &mut p), BilexStatus::Stats);
        assert_eq!(bilex_chi2_p_value(f64::NAN, 1, &mut p), BilexStatus::InvalidArgument);
        assert_eq!(bilex_chi2_p_value(1.0, 1, ptr::null_mut()), BilexStatus::NullArgument);
    }
    let v = unsafe { std::ffi::CStr::from_ptr(bilex_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn generated_header_declares_the_interface_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/bilex.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "bilex_last_error_message",
        "bilex_tokenizer_load",
        "bilex_tokenizer_encode",
        "bilex_tokenizer_decode",
        "bilex_tokenizer_free",
        "bilex_model_load",
        "bilex_model_surprisal",
        "bilex_model_free",
        "bilex_chi2_p_value",
        "BILEX_STATUS_BUFFER_TOO_SMALL",
        "typedef struct BilexTokenizer BilexTokenizer",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"bilex.h\"\n\
         int main(void) {\n\
           BilexTokenizer *t = NULL;\n\
           BilexStatus s = bilex_tokenizer_load(\"v.json\", &t);\n\
           size_t n = 0; uint32_t ids[4];\n\
           if (s == BILEX_STATUS_OK) bilex_tokenizer_encode(t, \"x\", BILEX_LANG_L1, ids, 4, &n);\n\
           bilex_tokenizer_free(t);\n\
           return (int)n;\n\
         }\n",
    )
    .unwrap();
    for compiler in ["cc", "c++"] {
        let mut cmd = Command::new(compiler);
        if compiler == "c++" {
            cmd.args(["-x", "c++"]);
        }
        let out = match cmd.arg("-fsyntax-only").arg("-Wall").arg("-Werror").arg("-I").arg(header.parent().unwrap()).arg(&src).output() {
            Ok(o) => o,
            Err(_) => {
                eprintln!("{compiler} not available; skipping compile check");
                continue;
            }
        };
        assert!(out.status.success(), "{compiler}: {}", String::from_utf8_lossy(&out.stderr));
    }
}
