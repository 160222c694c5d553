/// Equivalent (prediction, gold) pairs over the fixture database.
pub const EX_SUITE: &[(&str, &str)] = &[
    ("SELECT COUNT(*) FROM schools", "SELECT COUNT(CDSCode) FROM schools"),
    ("SELECT School FROM schools WHERE Magnet = 1", "SELECT School FROM schools WHERE Magnet <> 0 AND Magnet IS NOT NULL"),
    ("SELECT Phone FROM schools WHERE County = 'Fresno' AND Phone IS NOT NULL", "SELECT Phone FROM schools WHERE NOT Phone IS NULL AND County LIKE 'fresno'"),
    (
        "SELECT T1.School FROM schools AS T1 JOIN frpm AS T2 ON T1.CDSCode = T2.CDSCode WHERE T2.`Low Grade` = 'K' AND T2.`High Grade` = '8' AND T1.Magnet = 1",
        "SELECT School FROM schools WHERE Magnet = 1 AND CDSCode IN (SELECT CDSCode FROM frpm WHERE `Low Grade` = 'K' AND `High Grade` = '8')",
    ),
    ("SELECT MAX(AvgScrMath) FROM satscores", "SELECT AvgScrMath FROM satscores ORDER BY AvgScrMath DESC LIMIT 1"),
    (
        "SELECT s.Phone FROM schools s JOIN satscores t ON s.CDSCode = t.cds ORDER BY t.AvgScrMath DESC LIMIT 1",
        "SELECT Phone FROM schools WHERE CDSCode = (SELECT cds FROM satscores WHERE AvgScrMath = (SELECT MAX(AvgScrMath) FROM satscores))",
    ),
    ("SELECT County, COUNT(*) FROM schools GROUP BY County ORDER BY COUNT(*)", "SELECT County, COUNT(*) FROM schools GROUP BY 1 ORDER BY 2"),
    ("SELECT School FROM schools WHERE EdOpsCode = 'SSS'", "SELECT School FROM schools WHERE EdOpsCode IN ('SSS')"),
    ("SELECT COUNT(*) FROM schools WHERE OpenDate > '1991-01-01'", "SELECT SUM(OpenDate > '1991-01-01') FROM schools"),
    (
        "SELECT `Free Meal Count (K-12)` / `Enrollment (K-12)` FROM frpm WHERE `School Name` = 'Bay Farm'",
        "SELECT CAST(`Free Meal Count (K-12)` AS REAL) / `Enrollment (K-12)` FROM frpm WHERE CDSCode = '01611190132878'",
    ),
    ("SELECT COUNT(*) FROM frpm WHERE `Charter Funding Type` = 'Directly funded'", "SELECT 4"),
    ("SELECT DISTINCT County FROM schools", "SELECT County FROM schools GROUP BY County"),
    ("SELECT School FROM schools WHERE Phone IS NULL", "SELECT School FROM schools EXCEPT SELECT School FROM schools WHERE Phone IS NOT NULL"),
    ("SELECT sname FROM satscores WHERE NumTstTakr BETWEEN 50 AND 200", "SELECT sname FROM satscores WHERE NumTstTakr >= 50 AND NumTstTakr <= 200"),
    ("SELECT AVG(n) FROM numbers", "SELECT 750.5"),
    ("SELECT SUM(n) FROM numbers", "SELECT 1500 * 1501 / 2"),
    (
        "WITH a AS (SELECT CDSCode FROM frpm WHERE `Low Grade` = 'K') SELECT COUNT(*) FROM a",
        "SELECT COUNT(*) FROM frpm WHERE `Low Grade` = 'K'",
    ),
    ("SELECT District FROM schools WHERE CDSCode = '01100170109835'", "SELECT 'Alameda County Office of Education'"),
    ("SELECT MIN(OpenDate) FROM schools", "SELECT OpenDate FROM schools WHERE OpenDate IS NOT NULL ORDER BY OpenDate LIMIT 1"),
    ("SELECT School, Phone FROM schools WHERE County = 'Los Angeles'", "SELECT School, Phone FROM schools WHERE CDSCode LIKE '19%'"),
];
