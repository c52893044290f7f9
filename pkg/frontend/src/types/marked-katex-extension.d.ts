// The published package exposes its raw .ts source as its types, which our
// strict compiler flags would then lint.  This shim pins the small surface
// we use instead.
import type { KatexOptions } from "katex";
import type { MarkedExtension } from "marked";

export interface MarkedKatexOptions extends KatexOptions {
  nonStandard?: boolean;
}

export default function markedKatex(options?: MarkedKatexOptions): MarkedExtension;
