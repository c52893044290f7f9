import { ApiError, type Outcome, type PairView, type VoteApi } from "./api";
import { renderMarkdown } from "./render";

export type ViewMode = "rendered" | "raw";

type Phase = "loading" | "ready" | "submitting" | "revealed" | "error";

export interface VoteViewOptions {
  session?: string;
  /** Pause on the reveal before auto-advancing; 0 advances immediately. */
  revealMs?: number;
}

const KEYMAP: Record<string, Outcome> = {
  ArrowLeft: "W",
  ArrowRight: "L",
  t: "T",
  T: "T",
};

/**
 * Side-by-side voting pane.
 *
 * Holds one pair at a time and accepts exactly one vote for it.  The fetched
 * texts are kept verbatim: the raw/rendered toggle only switches which
 * projection is visible.  Model names reach the DOM only after the service
 * has acknowledged the vote.
 */
export class VoteView {
  private pair: PairView | null = null;
  private phase: Phase = "loading";
  private mode: ViewMode = "rendered";
  private advanceTimer: ReturnType<typeof setTimeout> | null = null;
  private retryAction: (() => void) | null = null;

  constructor(
    private readonly root: HTMLElement,
    private readonly api: VoteApi,
    private readonly opts: VoteViewOptions = {},
  ) {
    this.build();
    this.bind();
    this.applyMode();
  }

  get currentPair(): PairView | null {
    return this.pair;
  }

  get viewMode(): ViewMode {
    return this.mode;
  }

  start(): Promise<void> {
    return this.loadPair();
  }

  async vote(outcome: Outcome): Promise<void> {
    if (this.phase !== "ready" || this.pair === null) return;
    const pair = this.pair;
    this.setPhase("submitting");
    try {
      const reveal = await this.api.submitVote(pair.pair_id, outcome, this.opts.session);
      this.q("model-left").textContent = reveal.model_left;
      this.q("model-right").textContent = reveal.model_right;
      this.setPhase("revealed");
      this.scheduleAdvance();
    } catch (err) {
      if (err instanceof ApiError && (err.status === 409 || err.status === 410)) {
        // already voted, or the ticket lapsed: nothing left to do here
        void this.loadPair();
        return;
      }
      this.fail(err, () => void this.retryVote(outcome));
    }
  }

  toggleMode(): void {
    this.mode = this.mode === "rendered" ? "raw" : "rendered";
    this.applyMode();
  }

  /** ArrowLeft, ArrowRight and t map to the three vote buttons. */
  handleKey(event: KeyboardEvent): void {
    if (this.phase !== "ready") return;
    const outcome = KEYMAP[event.key];
    if (outcome === undefined) return;
    event.preventDefault();
    void this.vote(outcome);
  }

  private async loadPair(): Promise<void> {
    this.cancelAdvance();
    this.setPhase("loading");
    try {
      this.showPair(await this.api.fetchPair());
    } catch (err) {
      this.fail(err, () => void this.loadPair());
    }
  }

  private showPair(pair: PairView): void {
    this.pair = pair;
    this.q("prompt").textContent = pair.prompt;
    this.q("model-left").textContent = "";
    this.q("model-right").textContent = "";
    this.q("rendered-left").innerHTML = renderMarkdown(pair.left);
    this.q("rendered-right").innerHTML = renderMarkdown(pair.right);
    // textContent, not innerHTML: the raw panes show the bytes as received
    this.q("raw-left").textContent = pair.left;
    this.q("raw-right").textContent = pair.right;
    this.setPhase("ready");
  }

  private retryVote(outcome: Outcome): Promise<void> {
    this.setPhase("ready");
    return this.vote(outcome);
  }

  private scheduleAdvance(): void {
    const delay = this.opts.revealMs ?? 1500;
    if (delay <= 0) {
      void this.loadPair();
      return;
    }
    this.advanceTimer = setTimeout(() => void this.loadPair(), delay);
  }

  private cancelAdvance(): void {
    if (this.advanceTimer !== null) {
      clearTimeout(this.advanceTimer);
      this.advanceTimer = null;
    }
  }

  private fail(err: unknown, retry: () => void): void {
    this.retryAction = retry;
    this.q("error-message").textContent = err instanceof Error ? err.message : String(err);
    this.setPhase("error");
  }

  private setPhase(phase: Phase): void {
    this.phase = phase;
    const open = phase === "ready";
    for (const role of ["vote-left", "vote-tie", "vote-right"] as const) {
      (this.q(role) as HTMLButtonElement).disabled = !open;
    }
    this.q("next").hidden = phase !== "revealed";
    this.q("error").hidden = phase !== "error";
  }

  private applyMode(): void {
    const raw = this.mode === "raw";
    for (const side of ["left", "right"] as const) {
      this.q(`rendered-${side}`).hidden = raw;
      this.q(`raw-${side}`).hidden = !raw;
    }
    this.q("toggle").textContent = raw ? "View rendered" : "View raw";
  }

  private bind(): void {
    this.q("vote-left").addEventListener("click", () => void this.vote("W"));
    this.q("vote-tie").addEventListener("click", () => void this.vote("T"));
    this.q("vote-right").addEventListener("click", () => void this.vote("L"));
    this.q("toggle").addEventListener("click", () => this.toggleMode());
    this.q("next").addEventListener("click", () => void this.loadPair());
    this.q("retry").addEventListener("click", () => {
      const action = this.retryAction;
      this.retryAction = null;
      action?.();
    });
  }

  private build(): void {
    this.root.innerHTML = `
      <section class="prompt">
        <h2>Prompt</h2>
        <p data-role="prompt"></p>
      </section>
      <div class="error" data-role="error" hidden>
        <p data-role="error-message"></p>
        <button type="button" data-role="retry">Retry</button>
      </div>
      <div class="panes">
        <article class="pane">
          <header>
            <span>Left</span>
            <span class="model" data-role="model-left"></span>
          </header>
          <div class="rendered" data-role="rendered-left"></div>
          <pre class="raw" data-role="raw-left" hidden></pre>
        </article>
        <article class="pane">
          <header>
            <span>Right</span>
            <span class="model" data-role="model-right"></span>
          </header>
          <div class="rendered" data-role="rendered-right"></div>
          <pre class="raw" data-role="raw-right" hidden></pre>
        </article>
      </div>
      <div class="controls">
        <button type="button" data-role="vote-left">Left is better</button>
        <button type="button" data-role="vote-tie">Tie</button>
        <button type="button" data-role="vote-right">Right is better</button>
        <button type="button" data-role="toggle">View raw</button>
        <button type="button" data-role="next" hidden>Next pair</button>
      </div>
    `;
  }

  private q(role: string): HTMLElement {
    const el = this.root.querySelector<HTMLElement>(`[data-role="${role}"]`);
    if (el === null) throw new Error(`missing element ${role}`);
    return el;
  }
}
