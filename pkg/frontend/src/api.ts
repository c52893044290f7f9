export type Outcome = "W" | "L" | "T";

export interface PairView {
  pair_id: string;
  task_id: string;
  prompt: string;
  left: string;
  right: string;
  expires_in: number;
}

export interface VoteReveal {
  model_left: string;
  model_right: string;
  outcome: Outcome;
}

export interface LeaderboardRow {
  model: string;
  rating: number;
  ci_low: number | null;
  ci_high: number | null;
  games: number;
}

export interface Leaderboard {
  models: LeaderboardRow[];
  votes: number;
  tie_ratio: number;
}

/** What the views need from the service; tests substitute a mock. */
export interface VoteApi {
  fetchPair(): Promise<PairView>;
  submitVote(pairId: string, outcome: Outcome, session?: string): Promise<VoteReveal>;
  fetchLeaderboard(): Promise<Leaderboard>;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

/** JSON client for the voting service endpoints. */
export class ArenaClient implements VoteApi {
  constructor(private readonly baseUrl: string = "") {}

  fetchPair(): Promise<PairView> {
    return this.request<PairView>("GET", "/api/pair");
  }

  submitVote(pairId: string, outcome: Outcome, session?: string): Promise<VoteReveal> {
    return this.request<VoteReveal>("POST", "/api/vote", {
      pair_id: pairId,
      outcome,
      session: session ?? null,
    });
  }

  fetchLeaderboard(): Promise<Leaderboard> {
    return this.request<Leaderboard>("GET", "/api/leaderboard");
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const res = await fetch(this.baseUrl + path, {
      method,
      headers: body === undefined ? undefined : { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!res.ok) {
      let detail = res.statusText;
      try {
        const payload = (await res.json()) as { detail?: unknown };
        if (typeof payload.detail === "string") detail = payload.detail;
      } catch {
        // non-JSON error body, keep the status text
      }
      throw new ApiError(res.status, detail);
    }
    return (await res.json()) as T;
  }
}
