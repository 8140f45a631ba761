// Film strip state plus export: frames in index order, placeholders for
// pending nodes, and a zip download that reports how many files it packed.

import type { Api } from "./api.js";
import type { ProjectInfo } from "./types.js";
import { listZipEntries } from "./zip.js";

export interface ExportSummary {
  filename: string;
  entryNames: string[];
}

export function exportFilename(project: ProjectInfo): string {
  return `${project.id}.zip`;
}

export async function exportSequence(
  client: Pick<Api, "fetchExport">,
  project: ProjectInfo,
): Promise<ExportSummary> {
  const buffer = await client.fetchExport(project.id);
  return {
    filename: exportFilename(project),
    entryNames: listZipEntries(buffer),
  };
}

export function describeExport(summary: ExportSummary): string {
  return `${summary.entryNames.length} frames exported (${summary.entryNames[0]} … ${
    summary.entryNames[summary.entryNames.length - 1]
  })`;
}
