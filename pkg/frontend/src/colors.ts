/** Node color is a pure function of the entity type. */

const PALETTE: Record<string, string> = {
    report_malware: "#d64550",
    report_vulnerability: "#e8833a",
    report_attack: "#c9589b",
    vendor: "#8890a0",
    threat_actor: "#7048b6",
    technique: "#2a9d8f",
    tool: "#457bd9",
    software: "#5ec4d6",
    file_name: "#b0883f",
    file_path: "#94772e",
    ip: "#4a9e4f",
    url: "#3c8c74",
    email: "#6aa84f",
    domain: "#37845e",
    registry: "#a0722e",
    hash_md5: "#707a50",
    hash_sha1: "#64744a",
    hash_sha256: "#586e44",
};

const FALLBACK = "#666f7d";

export function colorFor(etype: string): string {
    return PALETTE[etype] ?? FALLBACK;
}
