import { Marked } from "marked";
import markedKatex from "marked-katex-extension";

// One instance, configured once.  Both panes must render through it so a
// visual difference between left and right can only come from the texts.
const renderer = new Marked(markedKatex({ throwOnError: false, nonStandard: true }));

/** Rewrite \(...\) and \[...\] to the dollar delimiters katex-extension reads. */
function normalizeDelimiters(text: string): string {
  return text
    .replace(/\\\[([\s\S]+?)\\\]/g, (_m, math: string) => `$$\n${math}\n$$`)
    .replace(/\\\(([\s\S]+?)\\\)/g, (_m, math: string) => `$${math}$`);
}

export function renderMarkdown(text: string): string {
  if (!text) return "";
  return renderer.parse(normalizeDelimiters(text), { async: false }) as string;
}
