/** Pure HTML fragments, kept out of app.ts so they are testable without a DOM. */

import type { PromptInfo } from "./types.js";

function escapeHtml(text: string): string {
  return text.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

/** <option> list with seen/unseen badges; `withNone` prepends a "none" entry. */
export function promptOptionsHtml(prompts: PromptInfo[], withNone = false): string {
  const items = prompts.map(
    (p) => `<option value="${p.id}">${escapeHtml(p.text)} ${p.split === "unseen" ? "[unseen]" : "[seen]"}</option>`,
  );
  if (withNone) {
    items.unshift(`<option value="">(no pair)</option>`);
  }
  return items.join("\n");
}

export function badgeListHtml(prompts: PromptInfo[]): string {
  return prompts
    .map((p) => `<li class="prompt ${p.split}"><span class="badge ${p.split}">${p.split}</span> ${escapeHtml(p.text)}</li>`)
    .join("\n");
}

export function emptyCorpusHtml(): string {
  return `<p class="banner">The service reports an empty corpus; controls are disabled.</p>`;
}

export function errorBannerHtml(message: string): string {
  return `<span class="banner error">${escapeHtml(message)}</span> <button id="retry">retry</button>`;
}
