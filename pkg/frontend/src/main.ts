import "katex/dist/katex.min.css";
import "./style.css";

import { ArenaClient } from "./api";
import { LeaderboardView } from "./leaderboard";
import { VoteView } from "./vote";

const client = new ArenaClient();
const session = Math.random().toString(36).slice(2, 10);

const voteRoot = document.querySelector<HTMLElement>("#vote-view");
const boardRoot = document.querySelector<HTMLElement>("#board-view");
const voteTab = document.querySelector<HTMLButtonElement>("#tab-vote");
const boardTab = document.querySelector<HTMLButtonElement>("#tab-board");
if (!voteRoot || !boardRoot || !voteTab || !boardTab) {
  throw new Error("page shell is incomplete");
}

const vote = new VoteView(voteRoot, client, { session });
const board = new LeaderboardView(boardRoot, client);

function showVote(): void {
  voteRoot!.hidden = false;
  boardRoot!.hidden = true;
  voteTab!.classList.add("active");
  boardTab!.classList.remove("active");
  board.stop();
}

function showBoard(): void {
  voteRoot!.hidden = true;
  boardRoot!.hidden = false;
  voteTab!.classList.remove("active");
  boardTab!.classList.add("active");
  board.start();
}

voteTab.addEventListener("click", showVote);
boardTab.addEventListener("click", showBoard);
document.addEventListener("keydown", (event) => {
  if (!voteRoot!.hidden) vote.handleKey(event);
});

showVote();
void vote.start();
