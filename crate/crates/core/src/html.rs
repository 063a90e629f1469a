//! HTML rendering of served posts.
//!
//! Content is written inline inside each `<p class="post-body">` so the text
//! a parser recovers is byte-identical to what was stored, which keeps the
//! consent tag verifiable after extraction.

use alloc::string::String;

use crate::consent::{wire, TaggedContent};

pub const ARTICLE_CLASS: &str = "article-contents";
pub const POST_CLASS: &str = "post-body";

/// Escapes text for element content and double-quoted attributes. Carriage
/// returns are written as references because parsers normalize raw CRs.
pub fn escape_html(text: &str, out: &mut String) {
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            '\r' => out.push_str("&#13;"),
            c => out.push(c),
        }
    }
}

/// The article container with one paragraph per item.
pub fn render_article(items: &[TaggedContent]) -> String {
    let mut out = String::new();
    out.push_str("<div class=\"");
    out.push_str(ARTICLE_CLASS);
    out.push_str("\">\n");
    for item in items {
        out.push_str("  <p class=\"");
        out.push_str(POST_CLASS);
        out.push('"');
        if let (Some(tag), false) = (&item.tag, item.masked) {
            out.push_str("\n    ");
            out.push_str(wire::ATTR_TAG_HASH);
            out.push_str("=\"");
            out.push_str(&tag.hash.to_hex());
            out.push_str("\"\n    ");
            out.push_str(wire::ATTR_TAG_SIG);
            out.push_str("=\"");
            out.push_str(&tag.signature.to_hex());
            out.push('"');
        }
        out.push('>');
        escape_html(&item.content, &mut out);
        out.push_str("</p>\n");
    }
    out.push_str("</div>");
    out
}

/// A full page around [`render_article`].
pub fn render_tagged_html(items: &[TaggedContent]) -> String {
    let mut out =
        String::from("<!DOCTYPE html>\n<html>\n<head><meta charset=\"utf-8\"><title>Posts</title></head>\n<body>\n");
    out.push_str(&render_article(items));
    out.push_str("\n</body>\n</html>\n");
    out
}
