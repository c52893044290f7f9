import type { Leaderboard, VoteApi } from "./api";

/** Rating table that refreshes itself while started. */
export class LeaderboardView {
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(
    private readonly root: HTMLElement,
    private readonly api: VoteApi,
    private readonly pollMs = 5000,
  ) {
    this.build();
  }

  start(): void {
    if (this.timer !== null) return;
    void this.refresh();
    this.timer = setInterval(() => void this.refresh(), this.pollMs);
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  async refresh(): Promise<void> {
    try {
      this.render(await this.api.fetchLeaderboard());
    } catch {
      // transient poll failure: keep the previous table
    }
  }

  private render(board: Leaderboard): void {
    const body = this.root.querySelector("tbody");
    if (body === null) return;
    body.innerHTML = "";
    board.models.forEach((row, i) => {
      const tr = document.createElement("tr");
      const interval =
        row.ci_low === null || row.ci_high === null
          ? "pending"
          : `[${row.ci_low.toFixed(1)}, ${row.ci_high.toFixed(1)}]`;
      for (const cell of [
        String(i + 1),
        row.model,
        row.rating.toFixed(1),
        interval,
        String(row.games),
      ]) {
        const td = document.createElement("td");
        td.textContent = cell;
        tr.appendChild(td);
      }
      body.appendChild(tr);
    });
    const meta = this.root.querySelector<HTMLElement>('[data-role="meta"]');
    if (meta !== null) {
      const ties = (board.tie_ratio * 100).toFixed(1);
      meta.textContent = `${board.votes} votes, ${ties}% ties`;
    }
  }

  private build(): void {
    this.root.innerHTML = `
      <table class="leaderboard">
        <thead>
          <tr><th>Rank</th><th>Model</th><th>Rating</th><th>95% CI</th><th>Games</th></tr>
        </thead>
        <tbody></tbody>
      </table>
      <p class="meta" data-role="meta"></p>
    `;
  }
}
